from .batch_processor import TaskPool
from .seeds import derive_rng, derive_seed
from .results import read_table, write_table
