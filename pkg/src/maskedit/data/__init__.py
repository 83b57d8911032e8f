"""Packaged data: bench case schema and the bundled synthetic sample cases."""

from importlib import resources
from pathlib import Path


def data_path(*parts: str) -> Path:
    return Path(resources.files(__package__).joinpath(*parts))


def bench_case_schema_path() -> Path:
    return data_path("schema", "bench_case.schema.json")


def sample_cases_dir() -> Path:
    return data_path("sample_cases")
