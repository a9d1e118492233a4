class HRProError(Exception):
    """Base error. ``code`` is the machine-parseable tag printed by the CLI."""

    code = "HRPRO_ERROR"


class LoadError(HRProError):
    code = "LOAD_ERROR"


class SchemaError(HRProError):
    code = "SCHEMA_ERROR"


class ValidationError(HRProError):
    code = "VALIDATION_ERROR"


class ConfigError(HRProError):
    code = "CONFIG_ERROR"


class GenerationError(HRProError):
    code = "GENERATION_ERROR"


class StateError(HRProError):
    code = "STATE_ERROR"


class DimensionError(HRProError):
    code = "DIMENSION_ERROR"


class InitializationError(HRProError):
    code = "INIT_ERROR"


class DivergenceError(HRProError):
    code = "DIVERGENCE"


class CheckpointError(HRProError):
    code = "CHECKPOINT_ERROR"


class StageError(HRProError):
    """Wraps a failure inside one pipeline stage."""

    code = "STAGE_FAILED"

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage} failed: {cause}")
