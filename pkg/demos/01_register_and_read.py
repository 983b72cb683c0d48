"""Register a dataset by reference, then watch bytes move only on first read.

Run: python demos/01_register_and_read.py
"""

from talekit import Engine, EngineConfig, SessionFilesystem

engine = Engine(EngineConfig(build_delay=0.0, fixture_path="fixtures/mock_datasets.json"))
token = engine.auth.authenticate("local", "demo", "s3cret").value

# Registration is a metadata-only walk of the provider's descriptor tree:
# a folder per dataset, an item + file reference per file, recursing into
# referenced sub-datasets. Zero data bytes move.
folder = engine.register_dataset(token, "mock:glass-ml")
print(f"registered {folder.name!r}")
for node in engine.catalog.walk(folder.id):
    print("  ", node.kind.lower().ljust(6), node.name)
print("bytes transferred so far:", engine.registry.total_bytes_transferred())

# A session snapshots the catalog shape into a filesystem view.
session = engine.create_session(token, [folder.id])
fs = SessionFilesystem(engine.dms, session)
print("\nsession paths:")
for path in sorted(session.files):
    print("  ", path, f"({fs.stat(path).size} bytes)")
print("bytes transferred after session:", engine.registry.total_bytes_transferred())

# The first open lazily materializes the file into the cache...
content = fs.read_file("/glass-ml/compositions.csv")
print("\nfirst read:", content.splitlines()[0], "...")
print("bytes transferred after first read:", engine.registry.total_bytes_transferred())

# ...and a second read is served locally.
fs.read_file("/glass-ml/compositions.csv")
print("bytes transferred after second read:", engine.registry.total_bytes_transferred())

engine.close()
