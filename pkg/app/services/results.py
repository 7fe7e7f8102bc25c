"""
Result tables
Every experiment writes CSV: a '#' comment header describing the columns, then a
header row and one row per record. Floats use 17 significant digits so that reruns
with the same master seed are byte-identical.
"""
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

import pandas as pd

FLOAT_FORMAT = '%.17g'


def write_table(path: Path, rows: Iterable[Dict[str, Any]], columns: Sequence[str],
                description: Optional[List[str]] = None) -> Path:
    """
    Write rows to a CSV file

    Args:
        path: Destination file (parents are created)
        rows: Records; missing columns are left empty
        columns: Column order
        description: Comment lines placed before the header row
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(list(rows), columns=list(columns))
    with open(path, 'w', newline='', encoding='utf-8') as handle:
        for line in description or []:
            handle.write(f"# {line}\n")
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    return path


def read_table(path: Path) -> pd.DataFrame:
    """Read a table written by write_table"""
    return pd.read_csv(path, comment='#')
