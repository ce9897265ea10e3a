"""Observer checkpoint files: a text header plus the parameter tensor.

The header is key=value lines describing the family and the selected
epoch, terminated by one blank line; the rest of the file is the flat
parameter vector as a VIQT float32 tensor of shape (1, P).  Parameters
round-trip at float32 precision.  Tabular observers cannot be saved
because their quantizer is code, not data.
"""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError, TensorFormatError
from ..tensors import tensor_bytes, tensor_from_bytes
from .families import ObserverFamily, TrainedObserver

_FORMAT_LINE = "viq-observer v1"


def save_observer(path, obs):
    if obs.family.kind == "tabular":
        raise InvalidInputError("tabular observers have no serializable quantizer")
    fam = obs.family
    lines = [
        _FORMAT_LINE,
        f"kind={fam.kind}",
        f"input_dims={fam.input_dims[0]},{fam.input_dims[1]}",
        f"num_classes={fam.num_classes}",
        f"hidden_sizes={','.join(str(s) for s in fam.hidden_sizes)}",
        f"num_modules={fam.num_modules}",
        f"base_channels={fam.base_channels}",
        f"selected_epoch={obs.selected_epoch}",
    ]
    header = ("\n".join(lines) + "\n\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + tensor_bytes(obs.theta[None, :]))


def load_observer(path):
    with open(path, "rb") as fh:
        data = fh.read()
    sep = data.find(b"\n\n")
    if sep < 0:
        raise TensorFormatError(f"{path}: missing header terminator")
    fields = {}
    header_lines = data[:sep].decode("ascii", errors="replace").splitlines()
    if not header_lines or header_lines[0] != _FORMAT_LINE:
        raise TensorFormatError(f"{path}: not an observer checkpoint")
    for line in header_lines[1:]:
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    try:
        hidden = tuple(
            int(s) for s in fields["hidden_sizes"].split(",") if s != ""
        )
        dims = tuple(int(s) for s in fields["input_dims"].split(","))
        family = ObserverFamily(
            fields["kind"],
            dims,
            int(fields["num_classes"]),
            hidden_sizes=hidden,
            num_modules=int(fields["num_modules"]),
            base_channels=int(fields["base_channels"]),
        )
        selected = int(fields["selected_epoch"])
    except KeyError as missing:
        raise TensorFormatError(f"{path}: header missing {missing}") from None
    theta = tensor_from_bytes(data[sep + 2 :], where=str(path))
    if np.iscomplexobj(theta):
        raise TensorFormatError(f"{path}: parameters must be real")
    return TrainedObserver(family, theta.ravel(), [], selected)
