"""Shared fixtures.

RSA-4096 generation is the slow part of the suite (~1 s per seeded pair),
so key pairs are created once per session and shared read-only.
"""

import pytest

from oconsent.identity import KeyPair, generate_keypair


@pytest.fixture(scope="session")
def subject_keypair() -> KeyPair:
    return generate_keypair(b"tests:data-subject:v1")


@pytest.fixture(scope="session")
def controller_keypair() -> KeyPair:
    return generate_keypair(b"tests:data-controller:v1")


@pytest.fixture(scope="session")
def platform_keypair() -> KeyPair:
    return generate_keypair(b"tests:platform:v1")


@pytest.fixture(scope="session")
def aux_keypair() -> KeyPair:
    return generate_keypair(b"tests:aux-controller:v1")
