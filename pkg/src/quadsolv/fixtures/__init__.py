"""Shipped example systems and the 7x7 monodromy matrices of the obstruction example."""

import json
from importlib import resources

from ..numkernel import exact_matrix
from ..system import SystemSpec, spec_from_dict


def load_fixture(name: str) -> dict:
    fname = name if name.endswith(".json") else name + ".json"
    return json.loads(resources.files(__name__).joinpath(fname).read_text(encoding="utf-8"))


def load_system(name: str) -> SystemSpec:
    return spec_from_dict(load_fixture(name))


def fixture_names() -> list:
    return sorted(p.name[:-5] for p in resources.files(__name__).iterdir()
                  if p.name.endswith(".json") and p.name != "bolibrukh_monodromy.json")


def bolibrukh_matrices() -> list:
    """M1..M4 as exact matrices."""
    doc = load_fixture("bolibrukh_monodromy")
    return [exact_matrix(doc["matrices"][f"M{i}"]) for i in range(1, 5)]
