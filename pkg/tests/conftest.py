from pathlib import Path

import pytest

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"

RURAL_UID = bytes.fromhex("ab0000000000000000000000000000a1")
CENTER_UID = bytes.fromhex("ab0000000000000000000000000000c1")
DISEASE_UID = bytes.fromhex("5e0000000000000000000000000000d1")
HEART_UID = bytes.fromhex("5e0000000000000000000000000000e1")
KIDNEY_UID = bytes.fromhex("5e0000000000000000000000000000f1")

FIPS_KEY = bytes.fromhex("000102030405060708090a0b0c0d0e0f")


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture()
def rural_model():
    from modelsink.modelfile import load_model
    return load_model(FIXTURES / "stroke" / "rural.model.toml")


@pytest.fixture()
def center_model():
    from modelsink.modelfile import load_model
    return load_model(FIXTURES / "stroke" / "center.model.toml")


@pytest.fixture()
def stroke_mapping():
    from modelsink.mapping import load_mapping_file
    return load_mapping_file(FIXTURES / "stroke" / "mapping.toml")


@pytest.fixture()
def sepsis_mapping():
    from modelsink.mapping import load_mapping_file
    return load_mapping_file(FIXTURES / "sepsis" / "mapping.toml")
