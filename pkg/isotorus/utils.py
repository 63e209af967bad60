import csv
import numbers
import os
from typing import Any, Dict, Iterable, List, Sequence, Union

from isotorus import IsotorusValidationError

# 17 significant digits round-trip every IEEE double
FLOAT_FORMAT = "{:.17g}"


def format_value(value: Any) -> str:
    """Formats one CSV cell; floats get 17 significant digits, everything else str()."""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, numbers.Integral):
        return str(value)
    try:
        return FLOAT_FORMAT.format(float(value))
    except (TypeError, ValueError):
        return str(value)


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """
    Writes rows to a CSV file with a header line.

    Args:
        path: Destination file. Parent directories are created.
        header: Column names.
        rows: Iterable of row sequences, each as long as the header.

    Returns:
        The path written.

    Raises:
        IsotorusValidationError: If a row length does not match the header.
    """
    parent = os.path.dirname(os.path.abspath(path))
    ensure_dir(parent)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for i, row in enumerate(rows):
            if len(row) != len(header):
                raise IsotorusValidationError(
                    f"Row {i} of {path} has {len(row)} values, expected {len(header)} ({', '.join(header)})."
                )
            writer.writerow([format_value(v) for v in row])
    return path


def read_csv_table(path: str) -> Dict[str, Any]:
    """
    Reads a CSV file written by write_csv into {"columns": [...], "dataset": [[...], ...]}.

    Cells are converted to float where possible.
    """
    try:
        with open(path, "r", newline="") as f:
            reader = csv.reader(f)
            rows = list(reader)
    except FileNotFoundError as e:
        raise IsotorusValidationError(f"CSV file not found: {path}") from e
    if not rows:
        raise IsotorusValidationError(f"CSV file is empty: {path}")
    columns = [{"name": name.strip()} for name in rows[0]]
    dataset = []
    for row in rows[1:]:
        if not row:
            continue
        converted = []
        for cell in row:
            try:
                converted.append(float(cell))
            except ValueError:
                converted.append(cell)
        dataset.append(converted)
    return {"columns": columns, "dataset": dataset}


def extract_column(table: Dict[str, Any], field: Union[str, int]) -> List[Any]:
    """
    Extracts the values of one column from a table returned by read_csv_table.

    If 'field' is a string and an exact match isn't found, a case-insensitive
    match is tried.

    Args:
        table: {"columns": [{"name": ...}, ...], "dataset": [[...], ...]}.
        field: Column name or 0-based column index.

    Returns:
        The column values in row order.

    Raises:
        IsotorusValidationError: If the column does not exist or a row is too short.
    """
    columns = [c.get("name") for c in table["columns"]]
    if isinstance(field, str):
        if field in columns:
            column_index = columns.index(field)
        else:
            lowered = [c.lower() if c is not None else None for c in columns]
            if field.lower() not in lowered:
                raise IsotorusValidationError(
                    f"Column name '{field}' not found (case-insensitive search also failed). Available columns: {columns}"
                )
            column_index = lowered.index(field.lower())
    elif isinstance(field, int):
        if not 0 <= field < len(columns):
            raise IsotorusValidationError(
                f"Column index {field} is out of range (must be between 0 and {len(columns) - 1})."
            )
        column_index = field
    else:
        raise IsotorusValidationError(
            f"Input 'field' must be a string (column name) or an integer (index), but got {type(field).__name__}."
        )

    values = []
    for i, row in enumerate(table["dataset"]):
        if column_index >= len(row):
            raise IsotorusValidationError(
                f"Row {i} has length {len(row)}, but tried to access index {column_index} (for column '{columns[column_index]}')."
            )
        values.append(row[column_index])
    return values
