"""Shared fixtures: the packaged study instances."""

import importlib.resources as resources

import pytest

from gridseg.ingest import parse_comm_topology, parse_grid_case


def _read_data(name: str) -> str:
    return resources.files("gridseg.data").joinpath(name).read_text()


@pytest.fixture(scope="session")
def grid9():
    return parse_grid_case(_read_data("case9.m"))


@pytest.fixture(scope="session")
def comm9(grid9):
    return parse_comm_topology(_read_data("comm9.txt"), grid=grid9)


@pytest.fixture(scope="session")
def grid30():
    return parse_grid_case(_read_data("case30.m"))


@pytest.fixture(scope="session")
def comm30(grid30):
    return parse_comm_topology(_read_data("comm30.txt"), grid=grid30)
