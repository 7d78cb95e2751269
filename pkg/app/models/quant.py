# app/models/quant.py

from dataclasses import dataclass, field

import numpy as np

from app.schemas.quant import QuantSpec


@dataclass(frozen=True, eq=False)
class QuantizedPayload:
    """
    Encoded upload of one device: the grid description plus one level
    index per parameter. Indices are kept unpacked in memory; the packed
    b-bit form is produced by quant_service.encode_payload.
    """

    spec: QuantSpec
    indices: np.ndarray = field(repr=False)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)

    @property
    def dimension(self) -> int:
        return int(self.indices.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantizedPayload):
            return NotImplemented
        return self.spec == other.spec and np.array_equal(self.indices, other.indices)
