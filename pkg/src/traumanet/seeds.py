"""Labelled seed derivation.

Every random stream in a run comes from one master seed:
``derive_seed(master, "phase1")`` is the first 8 bytes (little endian) of
BLAKE2b over ``"<master>/<label>"``.  Streams with different labels are
independent, and adding a new stream never shifts an existing one.
"""

import hashlib


def derive_seed(seed: int, label: str) -> int:
    digest = hashlib.blake2b(f"{int(seed)}/{label}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")
