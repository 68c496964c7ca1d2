from __future__ import annotations

import os

import pytest

from fedlr.secureagg import keypair_from_primes, paillier_keygen


@pytest.fixture(scope="session")
def keys256():
    return paillier_keygen(256, seed=1234)


@pytest.fixture(scope="session")
def toy_keys():
    # textbook primes; tiny modulus, only for arithmetic checks
    return keypair_from_primes(5, 7)


@pytest.fixture(scope="session")
def synthetic_path(tmp_path_factory):
    from fedlr.datasets import synthetic_ratings

    return synthetic_ratings(tmp_path_factory.mktemp("syn") / "ratings.tsv")


@pytest.fixture(scope="session")
def ml100k_path():
    from fedlr.datasets import fetch_ml100k

    try:
        return fetch_ml100k()
    except Exception as e:  # no mirror access
        if os.environ.get("FEDLR_REQUIRE_DATA"):
            raise
        pytest.skip(f"MovieLens-100K unavailable: {e}")


def write_ratings(path, rows, delim="\t"):
    path.write_text("".join(delim.join(str(x) for x in r) + "\n" for r in rows))
    return path
