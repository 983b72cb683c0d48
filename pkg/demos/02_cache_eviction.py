"""Cache scoring and eviction: locked files survive, cold files go first.

Run: python demos/02_cache_eviction.py
"""

from talekit import Engine, EngineConfig, SessionFilesystem

# A deliberately tiny cache: 100 bytes.
engine = Engine(EngineConfig(build_delay=0.0, cache_capacity=100))
engine.mock_provider.add_dataset(
    "mock:tiny",
    "tiny",
    {"hot.bin": b"h" * 30, "cold.bin": b"c" * 40, "big.bin": b"B" * 50},
)
token = engine.auth.authenticate("local", "demo", "s3cret").value
folder = engine.register_dataset(token, "mock:tiny")
session = engine.create_session(token, [folder.id])
fs = SessionFilesystem(engine.dms, session)


def show(title):
    stats = engine.dms.cache_stats()
    print(f"{title}: used {stats['used']}/{stats['capacity']}, "
          f"{stats['entries']} entries ({stats['locked']} locked)")


# Materialize two files; keep 'hot' open so its entry stays locked.
hot = fs.open("/tiny/hot.bin")
fs.read_file("/tiny/cold.bin")
show("after hot (locked) + cold (unlocked)")

# Opening 'big' needs 50 B but only 30 are free. The cache scores the
# unlocked candidates (usage count, decayed frequency, recency) and evicts
# the cheapest until the transfer fits. 'hot' is locked, so 'cold' goes.
big = fs.open("/tiny/big.bin")
show("after big")
print("cold still cached?", engine.dms.entry(("mock", "mock:tiny", "mock://tiny/cold.bin")) is not None)
print("hot still cached?", engine.dms.entry(hot.key) is not None)

fs.close(hot)
fs.close(big)

# The periodic garbage collector restores the capacity bound after the
# fact as well, e.g. when capacity shrinks below what is already cached.
engine.dms.config.capacity = 32
report = engine.dms.gc_sweep()
print(f"gc after shrinking capacity: freed {report.bytes_freed} bytes "
      f"({len(report.evicted)} entries)")
show("after gc")

engine.close()
