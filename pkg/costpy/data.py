"""
Secret input data.

Inputs are secret shared once by their owning party; batching and
shuffling only re-index shares and are free.
"""
import logging
from typing import Optional, Sequence

from costpy import secure
from costpy.autograd import TraceTensor, numel, secret
from costpy.blocktree import current_context
from costpy.errors import ConfigError, ShapeError

logger = logging.getLogger(__name__)

LOADER_LABEL = 'dataloader'


def get_input_from(shape, party: int = 0) -> TraceTensor:
    """Secret share a tensor held by `party`."""
    if party < 0:
        raise ConfigError(f"party index must be non-negative: {party}")
    tensor = secret(shape)
    secure.share(tensor.numel)
    return tensor


class DataLoader:
    """Batches over secret shared samples.

    Parameters
    ----------
    shapes : sequence of shapes
      One shape per data tensor (e.g. samples and one-hot labels); the first
      dimension is the number of samples and must agree.
    batch_size : int
      Samples per batch.
    from_party : int
      Party holding the data.
    wraparound : bool
      Allow a batch larger than the data by cycling over it.

    """

    def __init__(
        self,
        shapes: Sequence,
        batch_size: int,
        from_party: int = 0,
        wraparound: bool = False
    ):
        shapes = [tuple(s) for s in shapes]
        if not shapes:
            raise ConfigError("DataLoader needs at least one data tensor")
        lengths = {s[0] for s in shapes}
        if len(lengths) != 1:
            raise ShapeError(f"data tensors differ in length: {shapes}")
        self.length = lengths.pop()
        if batch_size < 1:
            raise ConfigError(f"batch size must be positive: {batch_size}")
        if batch_size > self.length and not wraparound:
            raise ConfigError(
                f"batch size {batch_size} exceeds the {self.length} samples"
            )
        self.shapes = shapes
        self.batch_size = batch_size
        self.from_party = from_party
        self.tensors: Optional[list] = None

    def __len__(self):
        return max(self.length // self.batch_size, 1)

    def load(self) -> list:
        """Share every data tensor (once)."""
        if self.tensors is None:
            with current_context().label_scope(LOADER_LABEL):
                self.tensors = [
                    get_input_from(shape, self.from_party)
                    for shape in self.shapes
                ]
            logger.debug(
                f"Shared {sum(numel(s) for s in self.shapes)} element(s) "
                f"from party {self.from_party}"
            )
        return self.tensors

    def shuffle(self):
        # Public permutation of the shares.
        self.load()

    def __getitem__(self, i) -> tuple:
        tensors = self.load()
        return tuple(
            secret((self.batch_size,) + t.shape[1:]) for t in tensors
        )
