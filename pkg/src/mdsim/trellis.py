"""Generic finite-trellis container shared by all encoders and decoders."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrellisSpec:
    """A time-invariant trellis.

    ``next_state[s, u]`` is the successor of state ``s`` under input ``u``.
    ``outputs[s, u]`` is the branch label: a real-valued hypothesis for
    signal trellises, or a vector of code bits (trailing axis) for code
    trellises.  Immutable after construction; safe to share across workers.
    """

    num_states: int
    num_inputs: int
    next_state: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        if self.next_state.shape != (self.num_states, self.num_inputs):
            raise ValueError("next_state shape must be (num_states, num_inputs)")
        if self.outputs.shape[:2] != (self.num_states, self.num_inputs):
            raise ValueError("outputs must be indexed by (state, input)")
        self.next_state.setflags(write=False)
        self.outputs.setflags(write=False)

    @property
    def scalar_output(self) -> bool:
        return self.outputs.ndim == 2

    def dump(self) -> str:
        """Diagnostic text: one `state input next output` line per branch."""
        lines = []
        for s in range(self.num_states):
            for u in range(self.num_inputs):
                out = self.outputs[s, u]
                if self.scalar_output:
                    out_txt = f"{float(out):+.12g}"
                else:
                    out_txt = "".join(str(int(b)) for b in np.atleast_1d(out))
                lines.append(f"{s} {u} {int(self.next_state[s, u])} {out_txt}")
        return "\n".join(lines) + "\n"
