"""End-to-end checks of the wildsort command line.

usage: test_cli.py WILDSORT_BINARY MANIFEST_SCHEMA
"""

import json
import os
import struct
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

import jsonschema

BIN = None
SCHEMA = None


def wildsort(*args, env=None, cwd=None, check=True):
    proc = subprocess.run([BIN, *map(str, args)], capture_output=True, text=True, env=env, cwd=cwd)
    if check and proc.returncode != 0:
        raise AssertionError(f"wildsort {' '.join(map(str, args))} exited {proc.returncode}:\n{proc.stderr}")
    return proc


def load_manifest(path):
    m = json.loads(Path(path).read_text(encoding="utf-8"))
    jsonschema.validate(m, SCHEMA, cls=jsonschema.Draft202012Validator)
    return m


class CliTest(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory(prefix="wildsort-cli-")
        self.dir = Path(self._tmp.name)
        self.fixture = self.dir / "fx.csv"
        wildsort("synth", "--clusters", 3, "--per-cluster", 40, "--dim", 4, "--seed", 2, "-o", self.fixture)

    def tearDown(self):
        self._tmp.cleanup()

    def test_synth_formats_and_rawf32_header(self):
        raw = self.dir / "fx.f32"
        wildsort("synth", "--clusters", 3, "--per-cluster", 20, "--dim", 5, "--seed", 2, "-o", raw)
        head = raw.read_bytes()[:16]
        self.assertEqual(head[:4], b"FSEM")
        self.assertEqual(struct.unpack("<III", head[4:]), (1, 60, 5))
        self.assertEqual(raw.stat().st_size, 16 + 60 * 5 * 4)
        sidecar = [json.loads(line) for line in (self.dir / "fx.jsonl").read_text().splitlines()]
        self.assertEqual(len(sidecar), 60)
        self.assertEqual(sidecar[0]["label"], "c0")

        jl = self.dir / "fx_rows.jsonl"
        wildsort("synth", "--clusters", 3, "--per-cluster", 20, "--dim", 5, "--seed", 2, "-o", jl, "--format", "jsonl")
        first = json.loads(jl.read_text().splitlines()[0])
        self.assertEqual(set(first), {"id", "label", "vec"})
        self.assertEqual(len(first["vec"]), 5)

    def test_ingest_summary_and_conversion(self):
        out = json.loads(wildsort("ingest", "-i", self.fixture).stdout)
        self.assertEqual((out["n"], out["d"], out["format"]), (120, 4, "csv"))
        target = self.dir / "conv.f32"
        wildsort("ingest", "-i", self.fixture, "--convert", target, "--to", "rawf32", "--no-normalize")
        back = json.loads(wildsort("ingest", "-i", target).stdout)
        self.assertEqual((back["n"], back["d"], back["format"]), (120, 4, "rawf32"))

    def test_ingest_rejects_bad_input(self):
        bad = self.dir / "bad.csv"
        bad.write_text("item_id,label,dim_0,dim_1\na,x,1,2\nb,x,3\n")
        proc = wildsort("ingest", "-i", bad, check=False)
        self.assertEqual(proc.returncode, 1)
        self.assertIn("row", proc.stderr)
        self.assertTrue(proc.stderr.startswith("error:"))
        proc = wildsort("ingest", "-i", self.dir / "missing.csv", check=False)
        self.assertEqual(proc.returncode, 1)

    def test_usage_errors(self):
        self.assertNotEqual(wildsort("cluster", check=False).returncode, 0)
        self.assertNotEqual(wildsort("nonsense", check=False).returncode, 0)
        self.assertNotEqual(wildsort("ingest", "-i", self.fixture, "--format", "xml", check=False).returncode, 0)

    def test_cluster_gmm_and_render(self):
        out = self.dir / "gmm"
        proc = wildsort("cluster", "-i", self.fixture, "-o", out, "--k-max", 5, "--restarts", 2, "--no-normalize")
        m = load_manifest(out / "manifest.json")
        self.assertEqual(m["clustering"]["k"], 3)
        self.assertEqual(m["clustering"]["bic_report"]["search_range"], [2, 5])
        self.assertEqual(m["evaluation"]["accuracy"], 1.0)
        self.assertEqual(m["orderings"], [])
        self.assertIsNone(m["coherence"])
        self.assertIn("Macro Average", proc.stdout)
        tables = (out / "tables.txt").read_text(encoding="utf-8")
        self.assertEqual(wildsort("render", "-m", out / "manifest.json").stdout, tables)
        self.assertIn("no ordering run", tables)

    def test_cluster_dbscan_and_k_distance(self):
        prof = wildsort("cluster", "-i", self.fixture, "--k-distance", 4).stdout.split()
        values = [float(v) for v in prof]
        self.assertEqual(len(values), 120)
        self.assertEqual(values, sorted(values))
        out = self.dir / "db"
        wildsort("cluster", "-i", self.fixture, "-o", out, "--method", "dbscan", "--eps", 0.6, "--min-pts", 4)
        m = load_manifest(out / "manifest.json")
        self.assertEqual(m["clustering"]["method"], "dbscan")
        self.assertIsNone(m["clustering"]["bic_report"])

    def test_sort_runs_and_seeds(self):
        out = self.dir / "sorted"
        proc = wildsort("sort", "-i", self.fixture, "-o", out, "--runs", 3, "--perplexity", 8, "--iterations", 400,
                        "--tsne-seed", 11)
        m = load_manifest(out / "manifest.json")
        self.assertEqual(m["seeds"]["ordering"], [11, 12, 13])
        self.assertEqual(len(m["orderings"]), 3)
        self.assertEqual(sorted(m["orderings"][0]["permutation"]), list(range(120)))
        self.assertEqual(m["coherence"]["runs"], 3)
        self.assertIsNone(m["clustering"])
        self.assertIn("Runs: 3", proc.stdout)
        self.assertIn("±", proc.stdout)

    def test_run_with_config_overrides_and_determinism(self):
        cfg = self.dir / "cfg.json"
        cfg.write_text(json.dumps({
            "input": {"path": str(self.fixture)},
            "reduction": {"type": "pca", "pca_dims": 3},
            "method": {"type": "gmm", "k_min": 2, "k_max": 4, "seed": 3, "restarts": 2},
            "ordering": {"runs": 2, "tsne": {"perplexity": 8, "iterations": 300}},
            "output_dir": str(self.dir / "ignored"),
        }))
        printed = json.loads(wildsort("run", "-c", cfg, "--k-max", 5, "-o", self.dir / "r1", "--print-config").stdout)
        self.assertEqual(printed["method"]["k_max"], 5)
        self.assertFalse((self.dir / "r1").exists())

        wildsort("run", "-c", cfg, "-o", self.dir / "r1")
        wildsort("run", "-c", cfg, "-o", self.dir / "r1")
        a = load_manifest(self.dir / "r1" / "manifest.json")
        wildsort("run", "-c", cfg, "-o", self.dir / "r2", "--no-cache")
        b = load_manifest(self.dir / "r2" / "manifest.json")
        for m in (a, b):
            m.pop("created_at")
            m["config"].pop("output_dir")
        self.assertEqual(json.dumps(a, sort_keys=True), json.dumps(b, sort_keys=True))
        self.assertEqual(a["reduction"], {"type": "pca", "output_dim": 3})

    def test_evaluation_requires_labels(self):
        plain = self.dir / "plain.csv"
        rows = self.fixture.read_text().splitlines()
        out_rows = [rows[0]]
        for line in rows[1:]:
            parts = line.split(",")
            parts[1] = ""
            out_rows.append(",".join(parts))
        plain.write_text("\n".join(out_rows) + "\n")
        proc = wildsort("cluster", "-i", plain, "-o", self.dir / "x", "--k-max", 4, "--evaluate", "on", check=False)
        self.assertEqual(proc.returncode, 1)
        self.assertIn("evaluation requires labels", proc.stderr)
        self.assertFalse((self.dir / "x" / "manifest.json").exists())

        wildsort("cluster", "-i", plain, "-o", self.dir / "y", "--k-max", 4)
        m = load_manifest(self.dir / "y" / "manifest.json")
        self.assertIsNone(m["evaluation"])
        self.assertFalse(m["dataset"]["labeled"])

    def test_eval_with_annotation_export(self):
        plain = self.dir / "plain.f32"
        wildsort("ingest", "-i", self.fixture, "--convert", plain, "--to", "rawf32", "--no-normalize")
        (self.dir / "plain.jsonl").unlink()
        wildsort("cluster", "-i", plain, "-o", self.dir / "u", "--k-max", 4, "--no-normalize")
        manifest = self.dir / "u" / "manifest.json"
        m = load_manifest(manifest)
        self.assertEqual(m["items"][0]["id"], "0")

        # three labeled ranges, as an annotation tool would export them
        ranges = [(0, 40, "fox"), (40, 80, "crow"), (80, 120, "badger")]
        lines = [json.dumps({"item_id": str(i), "label": lab}) for lo, hi, lab in ranges for i in range(lo, hi)]
        labels = self.dir / "annotations.jsonl"
        labels.write_text("\n".join(lines) + "\n")
        written = self.dir / "evaluated.json"
        proc = wildsort("eval", "-m", manifest, "--labels", labels, "--write", written)
        self.assertIn("Accuracy: 1.000 (120/120)", proc.stdout)
        e = load_manifest(written)
        totals = {s["species"]: s["total"] for s in e["evaluation"]["per_species"]}
        self.assertEqual(totals, {"fox": 40, "crow": 40, "badger": 40})
        self.assertEqual(e["items"][45]["label"], "crow")
        self.assertEqual(load_manifest(manifest)["evaluation"], None)

        labels.write_text(json.dumps({"item_id": "nope", "label": "x"}) + "\n")
        proc = wildsort("eval", "-m", manifest, "--labels", labels, check=False)
        self.assertEqual(proc.returncode, 1)
        self.assertIn("unknown item_id", proc.stderr)

    def test_default_output_root_from_environment(self):
        env = dict(os.environ, WILDSORT_OUTPUT_ROOT=str(self.dir / "root"))
        proc = wildsort("cluster", "-i", self.fixture, "--k-max", 4, env=env)
        manifests = list((self.dir / "root").rglob("manifest.json"))
        self.assertEqual(len(manifests), 1)
        self.assertIn(str(manifests[0]), proc.stdout)
        load_manifest(manifests[0])

    def test_render_errors(self):
        bad = self.dir / "bad.json"
        bad.write_text("{not json")
        self.assertEqual(wildsort("render", "-m", bad, check=False).returncode, 1)


if __name__ == "__main__":
    if len(sys.argv) < 3:
        sys.exit(__doc__)
    BIN = str(Path(sys.argv.pop(1)).resolve())
    SCHEMA = json.loads(Path(sys.argv.pop(1)).read_text(encoding="utf-8"))
    jsonschema.Draft202012Validator.check_schema(SCHEMA)
    unittest.main(verbosity=2)
