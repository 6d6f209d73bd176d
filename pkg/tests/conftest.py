import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def write_csv(path: Path, header: list, rows: list) -> Path:
    lines = [",".join(header)] + [",".join("" if v is None else str(v) for v in r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


MAPPING_HEADER = ["key_variable", "api_parameter", "source_dataset", "platform", "notes"]


@pytest.fixture
def mapping_file(tmp_path):
    rows = [
        ["T2M", "T2M", "NASA POWER", "NASA_POWER", ""],
        ["NDVI", "NDVI", "Sentinel-2", "COPERNICUS/S2", ""],
        ["EVI", "", "Sentinel-2", "COPERNICUS/S2", '"EVI = 2.5(NIR-RED)/(NIR+6RED-7.5BLUE+1)"'],
        ["VV", "VV", "Sentinel-1", "COPERNICUS/S1_GRD", ""],
        ["clay", "clay_0-5cm_mean", "SoilGrids", "ISRIC/SoilGrids", ""],
    ]
    return write_csv(tmp_path / "mapping.csv", MAPPING_HEADER, rows)


@pytest.fixture
def fields_file(tmp_path):
    header = ["field_id", "lat", "lon", "window_start", "window_end", "yield_kg_ha", "district", "season"]
    rows = [
        ["A", 10.5, 105.1, "2022-06-01", "2022-06-30", 6500, "d1", "wet"],
        ["B", 10.6, 105.2, "2022/06/01", "2022/06/30", 7000, "d1", "wet"],
        ["C", 10.7, 105.3, "2022-06-01", "2022-06-30", "", "d2", "dry"],
    ]
    return write_csv(tmp_path / "fields.csv", header, rows)


# one line per acceptance criterion, echoed in the terminal summary so it
# survives output capture
ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, passed: bool, title: str, detail: str) -> str:
    line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
