import math

from rich.jupyter import JupyterMixin
from rich.table import Table


def fmt(value, digits=8):
    """Format a number for display."""
    if value is None:
        return "-"
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return f"{value:.{digits}g}"
    return str(value)


class ResultView(JupyterMixin):
    """A Rich renderable key/value or row table for command results."""

    def __init__(self, rows=None, columns=None, title="Result"):
        """
        Initialize the view.

        Args:
            rows: list of dicts (one table row each) or a single dict (key/value view)
            columns: column order for row tables (defaults to the keys of the first row)
            title: table title
        """
        self.title = title
        self.columns = columns
        self.rows = []
        self.set_data(rows if rows is not None else [])

    def set_data(self, rows, columns=None):
        """Update the rows."""
        self.rows = [rows] if isinstance(rows, dict) else list(rows)
        if columns is not None:
            self.columns = columns

    def set_title(self, title):
        self.title = title

    def __rich_console__(self, console, options):
        """Render the table for Rich."""
        yield self._make_table()

    def _make_table(self):
        if len(self.rows) == 1 and self.columns is None:
            table = Table(title=self.title, show_header=False)
            table.add_column("quantity", style="bold cyan")
            table.add_column("value")
            for key, value in self.rows[0].items():
                if isinstance(value, (list, dict)):
                    continue
                table.add_row(str(key), fmt(value))
            return table
        columns = self.columns or (list(self.rows[0].keys()) if self.rows else [])
        table = Table(title=self.title)
        for col in columns:
            table.add_column(str(col), justify="right")
        for row in self.rows:
            table.add_row(*(_styled(col, row.get(col)) for col in columns))
        return table


def _styled(column, value):
    text = fmt(value)
    if column in ("passed", "pass") and isinstance(value, bool):
        return "[green]PASS[/green]" if value else "[red]FAIL[/red]"
    return text


def estimate_view(name, estimate, extra=None):
    """Key/value view of an Estimate plus extra scalar fields."""
    record = {"quantity": name, **estimate.to_record(), **(extra or {})}
    record["relative_stderr"] = estimate.relative_stderr
    return ResultView(record, title=name)
