"""Shared fixtures: the reference family and a strongly separated one."""

import logging

import pytest

from acbound.lb_family import build_family


@pytest.fixture(scope="session")
def reference_family():
    """d=1, q=16, delta=0.2, alpha=1, C=1/2, c2=1/4; exhaustive code with min Hamming 2"""
    return build_family(d=1, q=16, delta=0.2, alpha=1.0, C=0.5, c2=0.25)


@pytest.fixture(scope="session")
def strong_family():
    """Large amplitude and plateau mass, so ERM recovers the Bayes rule at moderate n"""
    return build_family(d=1, q=16, delta=0.9, alpha=1.0, C=1.0, c2=0.45, min_hamming=4)


@pytest.fixture(scope="session")
def tiny_family():
    """b = 4, every sign pattern is a code"""
    return build_family(d=1, q=4, delta=0.5, alpha=1.0, C=1.0, c2=0.4)


@pytest.fixture
def package_logs(caplog):
    """caplog wired to the package logger, which does not propagate"""
    logger = logging.getLogger("acbound")
    logger.addHandler(caplog.handler)
    caplog.set_level(logging.DEBUG, logger="acbound")
    yield caplog
    logger.removeHandler(caplog.handler)
