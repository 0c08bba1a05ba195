"""The `.lmkw` weight container: bit-exact round trips, CRC-guarded loads.

Writes a full random-initialized model, reads it back, checks equality, then
flips one bit and shows the loader refusing the file.
"""

import tempfile
from pathlib import Path


from lmkit.config import default_config
from lmkit.weights import (ChecksumError, load, random_init_store, save,
                           validate_against_config)

cfg = default_config()
store = random_init_store(cfg, seed=7)
print(f"store: {len(store)} tensors, {store.element_count()} elements")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "student.lmkw"
    save(store, path)
    size = path.stat().st_size
    print(f"container: {size} bytes ({size / store.element_count():.2f} bytes/element)")

    back = load(path)
    print("round trip bit-exact:", back == store)
    print("schema validation:", validate_against_config(back, cfg).summary())

    blob = bytearray(path.read_bytes())
    blob[size // 2] ^= 0x20
    path.write_bytes(bytes(blob))
    try:
        load(path)
        print("corruption NOT detected (bug!)")
    except ChecksumError as exc:
        print("flipped one bit ->", exc)

    # f16 halves the payload; arithmetic upcasts to f32 on use
    half = random_init_store(cfg, seed=7, dtype="f16")
    path16 = Path(tmp) / "student_f16.lmkw"
    save(half, path16)
    print(f"f16 container: {path16.stat().st_size} bytes")
