"""Runs `gxestat all` and checks the output tree with independent parsers:
every SVG is well-formed XML with an 800x800 viewBox, bundle.json parses and
has the documented top-level layout."""

import json
import subprocess
import sys
import tempfile
import xml.etree.ElementTree as ET
from pathlib import Path

SVG_NS = "{http://www.w3.org/2000/svg}"
GGE_MODES = ["pc_scatter", "mean_vs_stability", "ranking_genotypes", "ranking_environments",
             "which_won_where", "discrim_vs_repr", "env_relationship"]


def fail(msg):
    print("FAIL:", msg)
    sys.exit(1)


def main():
    exe, data = sys.argv[1], sys.argv[2]
    extra = sys.argv[3:]
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "out"
        r = subprocess.run([exe, "all", "-i", data, "--n-boot", "99", "--seed", "3", "-o", str(out), *extra],
                           capture_output=True, text=True)
        if r.returncode != 0:
            fail(f"exit {r.returncode}: {r.stderr}")
        svgs = sorted(out.glob("*.svg"))
        if len(svgs) < 9:
            fail(f"only {len(svgs)} SVG files")
        for svg in svgs:
            try:
                root = ET.parse(svg).getroot()
            except ET.ParseError as e:
                fail(f"{svg.name}: {e}")
            if root.tag != SVG_NS + "svg":
                fail(f"{svg.name}: root element {root.tag}")
            if [float(v) for v in root.get("viewBox", "").split()] != [0, 0, 800, 800]:
                fail(f"{svg.name}: viewBox {root.get('viewBox')}")
            if not list(root.iter(SVG_NS + "text")):
                fail(f"{svg.name}: no labels")
        for mode in GGE_MODES:
            if not (out / f"gge_{mode}.svg").exists():
                fail(f"gge_{mode}.svg missing")
            doc = json.loads((out / f"gge_{mode}.json").read_text())
            if doc["mode"] != mode:
                fail(f"gge_{mode}.json has mode {doc['mode']}")

        bundle = json.loads((out / "bundle.json").read_text())
        if not bundle["version"].startswith("gxestat-bundle/1."):
            fail(f"version {bundle['version']}")
        for key in ["dataset_summary", "significance", "stability", "ammi", "gge"]:
            if key not in bundle:
                fail(f"bundle lacks {key}")
        if len(bundle["gge"]["biplots"]) != 7:
            fail("bundle does not carry all seven GGE modes")
        ww = next(b for b in bundle["gge"]["biplots"] if b["mode"] == "which_won_where")
        if ww.get("winners") is not None:
            assigned = set(ww["winners"]["environments"])
            if assigned != {p["label"] for p in ww["environments"]}:
                fail("winner assignment does not cover every environment")
        print(f"ok: {len(svgs)} SVG files well-formed, bundle.json {len(json.dumps(bundle))} bytes")


if __name__ == "__main__":
    main()
