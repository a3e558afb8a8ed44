"""Regenerates the synthetic fixture: 2 layers x 4 channels, 3 patches each."""
import hashlib
import json
import pathlib
import struct
import zlib

HERE = pathlib.Path(__file__).resolve().parent


def png(rgb, size=8):
    # Minimal solid-colour PNG, byte-stable across platforms.
    raw = b"".join(b"\x00" + bytes(rgb) * size for _ in range(size))

    def chunk(tag, data):
        return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)

    return (b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", struct.pack(">IIBBBBB", size, size, 8, 2, 0, 0, 0))
            + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b""))


ATOMS = {
    ("layer1", 0): [["yellow", "bright yellow", "yellow color"],
                    ["yellow", "yellow feathers", "bright yellow"],
                    ["yellow", "bright yellow", "yellow plumage"]],
    ("layer1", 1): [["black stripes", "striped pattern", "black lines"],
                    ["black stripes", "stripes", "dark lines"],
                    ["striped pattern", "black stripes", "stripes"]],
    ("layer1", 2): [["green mesh", "grid texture", "net"],
                    ["grid texture", "green mesh", "mesh"],
                    ["net", "mesh", "grid pattern"]],
    ("layer1", 3): [["water", "sky", "wheel"],
                    ["text", "fur", "brick wall"],
                    ["grass", "metal", "clouds"]],
    ("layer2", 0): [["small bird", "finch head", "perched bird"],
                    ["small bird", "bird", "finch"],
                    ["finch head", "small bird", "bird beak"]],
    ("layer2", 1): [["fish scales", "fish", "fish body"],
                    ["fish", "scales", "fish fin"],
                    ["fish scales", "fish", "wet fish"]],
    ("layer2", 2): [["net fabric", "fishing net", "net"],
                    ["net fabric", "mesh fabric", "net"],
                    ["fishing net", "net", "net fabric"]],
    # The describer never answers for the second patch of this channel.
    ("layer2", 3): [["wooden table", "table", "wood grain"],
                    [],
                    ["table", "wooden table", "furniture"]],
}


def main():
    patches = HERE / "patches"
    images = HERE / "images"
    patches.mkdir(exist_ok=True)
    images.mkdir(exist_ok=True)

    concepts, script = [], {}
    for idx, ((layer, ch), per_patch) in enumerate(sorted(ATOMS.items())):
        refs = []
        for k, atoms in enumerate(per_patch):
            name = f"{layer}_c{ch}_p{k}.png"
            data = png((40 * idx % 256, 30 * k + 20, 200 - 20 * idx))
            (patches / name).write_bytes(data)
            script[hashlib.sha256(data).hexdigest()] = atoms
            refs.append({"patch_id": f"{layer}-{ch}-{k}", "image_path": f"patches/{name}",
                         "source_image_id": f"src_{idx:02d}_{k}",
                         "region": {"x": 0, "y": 0, "w": 8, "h": 8}})
        concepts.append({"layer": layer, "channel_index": ch, "patches": refs})

    manifest = {"model_id": "toy-cnn", "dataset_id": "synthetic", "xai_method": "relevance", "n_patches": 3,
                "layers": [{"name": "layer1", "stage_order": 0, "dimension": 4},
                           {"name": "layer2", "stage_order": 1, "dimension": 4}],
                "concepts": concepts}
    (HERE / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    (HERE / "describer_script.json").write_text(
        json.dumps({"vocabulary": ["object", "texture"], "images": script}, indent=2, sort_keys=True) + "\n")

    samples = {
        "goldfinch_01": ("goldfinch", "goldfinch", (250, 220, 30),
                         {"layer1": [1.0, 0.6, 0.0005, 0.0], "layer2": [1.0, 0.2, 0.0, 0.0]}),
        "tench_01": ("tench", "mosquito net", (60, 140, 60),
                     {"layer1": [0.1, 0.0, 1.0, 0.3], "layer2": [0.0, 0.05, 1.0, 0.0]}),
        "dark_01": ("goldfinch", "goldfinch", (10, 10, 10),
                    {"layer1": [1.0, 0.5, 0.0, 0.0], "layer2": [0.0, 0.0, 0.0, 0.0]}),
    }
    relevance = HERE / "relevance"
    relevance.mkdir(exist_ok=True)
    for sid, (label, pred, rgb, values) in samples.items():
        (images / f"{sid}.png").write_bytes(png(rgb, 16))
        doc = {"sample_id": sid, "image_path": f"../images/{sid}.png", "label": label, "prediction": pred,
               "per_layer_values": values}
        (relevance / f"{sid}.json").write_text(json.dumps(doc, indent=2) + "\n")


if __name__ == "__main__":
    main()
