from __future__ import annotations

import socket

import pytest

from promptforge.content import load_default_pack
from promptforge.validation import load_criteria

_REAL_CONNECT = socket.socket.connect


def _blocked_connect(self, address):
    if self.family in (socket.AF_INET, socket.AF_INET6):
        raise RuntimeError(
            f"test suite attempted a network connection to {address!r}; "
            "everything must run offline"
        )
    return _REAL_CONNECT(self, address)


@pytest.fixture(scope="session", autouse=True)
def no_network():
    """The whole suite runs with TCP networking disabled."""
    socket.socket.connect = _blocked_connect
    yield
    socket.socket.connect = _REAL_CONNECT


@pytest.fixture(scope="session")
def pack():
    return load_default_pack()


@pytest.fixture(scope="session")
def catalog():
    return load_criteria()
