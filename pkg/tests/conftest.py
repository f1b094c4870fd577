import functools

import pytest

from demogen.sim import load_task, scripted_demo
from demogen.synthesis import prepare

TASKS = ["pick_cube", "button_large", "button_small", "peg_insert", "two_object_insert",
         "bimanual_fruit_basket", "sauce_spread"]


@functools.lru_cache(maxsize=None)
def _source(name, seed):
    return scripted_demo(load_task(name), noise_seed=seed)


@functools.lru_cache(maxsize=None)
def _prepared(name, seed):
    return prepare(_source(name, seed))


def source(name, seed=0):
    return _source(name, seed)


def prepared(name, seed=0):
    return _prepared(name, seed)


@pytest.fixture(scope="session")
def cube_demo():
    return source("pick_cube")


@pytest.fixture(scope="session")
def cube_task():
    return load_task("pick_cube")
