"""Single-file checkpoints holding both stages, the memory and the config."""

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import torch

from .data import Config
from .errors import CheckpointError
from .instance import InstanceHeads
from .snippet_net import PrototypeMemory, SnippetNet

FORMAT_TAG = "hrpro-ckpt/1"

# fields that change the stage-1 architecture
ARCH_FIELDS = ("n_rab", "enable_rab")


@dataclass
class Model:
    config: Config
    num_classes: int
    D: int
    net: SnippetNet
    memory: PrototypeMemory
    heads: Optional[InstanceHeads] = None
    history: tuple = ()

    @property
    def has_instance_stage(self):
        return self.heads is not None


def save_checkpoint(path, model):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = {
        "format": FORMAT_TAG,
        "config": model.config.to_dict(),
        "num_classes": model.num_classes,
        "D": model.D,
        "snippet_state": model.net.state_dict(),
        "memory": torch.tensor(model.memory.prototypes),
        "memory_mu": model.memory.mu,
        "instance_state": None if model.heads is None else model.heads.state_dict(),
        "history": list(model.history),
    }
    torch.save(blob, path)
    return path


def load_checkpoint(path):
    try:
        blob = torch.load(Path(path), map_location="cpu", weights_only=False)
    except Exception as exc:  # torch raises pickle, zip and runtime errors alike
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path}: not a {FORMAT_TAG} checkpoint")
    config = Config.from_dict(blob["config"])
    net = SnippetNet(blob["D"], blob["num_classes"], config.n_rab, config.enable_rab)
    net.load_state_dict(blob["snippet_state"])
    net.eval()
    mem = PrototypeMemory(blob["memory"].numpy(), blob["memory_mu"])
    heads = None
    if blob["instance_state"] is not None:
        heads = InstanceHeads(blob["D"], config.head_hidden)
        heads.load_state_dict(blob["instance_state"])
        heads.eval()
    return Model(config, blob["num_classes"], blob["D"], net, mem, heads, tuple(blob.get("history", ())))


def check_compatible(model, config):
    """Refuse to continue training a stage-1 model under a different architecture."""
    bad = [f for f in ARCH_FIELDS if getattr(model.config, f) != getattr(config, f)]
    if bad:
        raise CheckpointError(f"config disagrees with the stage-1 checkpoint on {bad}")
