import pytest

from billiard_lab.io.scene_file import eclipsing_triple, equilateral_spheres, two_spheres


@pytest.fixture(scope="session")
def pair_scene():
    """Two unit spheres, centers at distance 6"""
    return two_spheres()


@pytest.fixture(scope="session")
def triangle_scene():
    """Three unit spheres at the vertices of an equilateral triangle of side 6"""
    return equilateral_spheres()


@pytest.fixture(scope="session")
def eclipsed_scene():
    return eclipsing_triple()


@pytest.fixture
def db_path(tmp_path):
    return tmp_path / "orbits.db"
