"""Package an environment + data into a tale, export it, and run instances.

Run: python demos/03_tale_lifecycle.py
"""

from talekit import Engine, EngineConfig, TaleMetadata

engine = Engine(EngineConfig(build_delay=0.0, fixture_path="fixtures/mock_datasets.json"))
token = engine.auth.authenticate("local", "demo", "s3cret").value

folder = engine.register_dataset(token, "mock:glass-ml")
recipe = engine.create_recipe(
    token, "jupyter-glass", "https://git.example/envs/glass", "4f2a9c1"
)
image, job = engine.build_image_job(token, recipe.id)
image = engine.tales.wait_image(image.id)
print(f"image {image.status}: {image.digest}")

tale = engine.create_tale(
    token,
    image.id,
    folder.id,
    TaleMetadata(
        title="Metallic glass screening",
        authors=["A. Researcher"],
        licenses={"environment": "MIT", "data": "CC-BY-4.0", "scripts": "MIT"},
    ),
)
engine.publish_tale(token, tale.id)
print(f"tale {tale.id} published")

# The manifest is self-contained: environment pin, by-reference data
# entries with provenance, metadata. It re-registers anywhere.
manifest = engine.export_tale(token, tale.id)
print("manifest data entries:")
for entry in manifest["data"]:
    print("  ", entry["posix_path"], entry["size"], entry["identifier"])

# Launching walks the seven-step protocol and records each step.
instance = engine.launch_instance(token, tale.id)
print(f"\ninstance {instance.state} at {instance.route_path}")
for step in instance.audit:
    print(f"  {step.index}. {step.name}: {step.outcome}")
host, port = engine.orchestrator.route_lookup(instance.route_path)
print(f"proxy resolves to {host}:{port}")

# The running tale reads its data through the mounted session.
mount = engine.orchestrator.instance_mount(instance.id)
print("mounted:", mount.listdir("/glass-ml"))
print("data:", mount.read_file("/glass-ml/compositions.csv").splitlines()[1])

engine.suspend_instance(token, instance.id)
print("suspended; route gone")
engine.resume_instance(token, instance.id)
print("resumed;", engine.orchestrator.route_lookup(instance.route_path))
engine.delete_instance(token, instance.id)
print("deleted; locks held:", engine.dms.total_locks())

engine.close()
