"""End-to-end checks of the odonto command line: exit codes, outputs, determinism.

Usage: python test_cli.py path/to/odonto
"""

import csv
import json
import os
import subprocess
import sys
import tempfile
import unittest
from pathlib import Path

EXE = None


def run(*args, cwd=None, env=None):
    full_env = dict(os.environ)
    full_env.pop("ODONTO_THREADS", None)
    if env:
        full_env.update(env)
    return subprocess.run([EXE, *map(str, args)], cwd=cwd, env=full_env, capture_output=True, text=True)


def rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


class ExitCodes(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self.tmp.name)

    def tearDown(self):
        self.tmp.cleanup()

    def config(self, obj):
        p = self.dir / "config.json"
        p.write_text(obj if isinstance(obj, str) else json.dumps(obj))
        return p

    def test_help(self):
        r = run("--help")
        self.assertEqual(r.returncode, 0)
        self.assertIn("sweep", r.stdout)

    def test_no_subcommand(self):
        self.assertEqual(run().returncode, 2)

    def test_missing_config(self):
        self.assertEqual(run("--config", self.dir / "nope.json", "sweep").returncode, 2)

    def test_malformed_config(self):
        self.assertEqual(run("--config", self.config("{not json"), "sweep").returncode, 2)

    def test_unknown_key(self):
        r = run("--config", self.config({"sweeep": {}}), "sweep")
        self.assertEqual(r.returncode, 2)
        self.assertIn("sweeep", r.stderr)

    def test_invalid_template(self):
        bad = {"patient": {"patient_id": "x", "teeth": [{"unn": 99}]}}
        self.assertEqual(run("--config", self.config(bad), "synth", "--out", self.dir).returncode, 2)

    def test_invalid_sweep(self):
        r = run("--config", self.config({"sweep": {"load_min": -1}}), "--out", self.dir, "sweep")
        self.assertEqual(r.returncode, 2)

    def test_threads(self):
        self.assertEqual(run("--threads", "-2", "fit").returncode, 2)
        self.assertEqual(run("fit", env={"ODONTO_THREADS": "many"}).returncode, 2)

    def test_fit_without_kinematics(self):
        self.assertEqual(run("--out", self.dir / "empty", "fit").returncode, 2)

    def test_audit_needs_both_files(self):
        node = self.dir / "m.node"
        node.write_text("4 3 0 0\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n")
        self.assertEqual(run("--out", self.dir, "mesh-audit", "--node", node).returncode, 2)

    def test_non_convergence(self):
        cfg = self.config({"solver": {"max_iters": 1, "max_bisections": 0, "newton_tol": 1e-14}})
        r = run("--config", cfg, "--out", self.dir, "--quiet", "simulate")
        self.assertEqual(r.returncode, 1, r.stderr)


class Pipeline(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.tmp = tempfile.TemporaryDirectory()
        cls.dir = Path(cls.tmp.name)

    @classmethod
    def tearDownClass(cls):
        cls.tmp.cleanup()

    def test_synth_audit_simulate(self):
        out = self.dir / "synth"
        r = run("--out", out, "--quiet", "synth")
        self.assertEqual(r.returncode, 0, r.stderr)
        for ext in (".node", ".ele", ".sets.json", ".model.json", ".info.json", ".patient.json"):
            self.assertTrue((out / ("single" + ext)).exists(), ext)
        sets = json.loads((out / "single.sets.json").read_text())
        self.assertIn("load_patch_24", json.dumps(sets))

        r = run("--out", out, "mesh-audit", "--node", out / "single.node", "--ele", out / "single.ele")
        self.assertEqual(r.returncode, 0, r.stderr)
        hist = rows(out / "quality_histogram.csv")
        names = {"volume_edge_ratio", "radius_ratio", "radius_edge_ratio", "mean_ratio"}
        bins = [h for h in hist if not h["metric"].endswith(":summary")]
        summary = {h["metric"][:-len(":summary")]: h for h in hist if h["metric"].endswith(":summary")}
        self.assertEqual({h["metric"] for h in bins}, names)
        self.assertEqual(set(summary), names)
        n_elements = int(summary["mean_ratio"]["count"])
        for m in names:
            self.assertEqual(sum(int(h["count"]) for h in bins if h["metric"] == m), n_elements)
        report = rows(out / "quality_report.csv")
        self.assertEqual({r["domain"] for r in report} >= {"bone", "tooth_24", "pdl_24"}, True)

        cfg = out / "run.json"
        cfg.write_text(json.dumps({"model_file": "single.model.json", "simulate": {"steps": 2}}))
        r = run("--config", cfg, "--out", out / "sim", "--quiet", "simulate", "--vtk")
        self.assertEqual(r.returncode, 0, r.stderr)
        kin = rows(out / "sim" / "kinematics.csv")
        self.assertEqual(len(kin), 2)
        self.assertGreater(float(kin[1]["t_mag_mm"]), float(kin[0]["t_mag_mm"]))
        vm = rows(out / "sim" / "von_mises.csv")
        self.assertTrue(vm and all(float(v["von_mises"]) >= 0 for v in vm))
        self.assertTrue((out / "sim" / "result.vtk").exists())

    def test_sweep_fit_deterministic(self):
        outputs = []
        for run_name in ("a", "b"):
            out = self.dir / run_name
            for cmd in ("sweep", "report"):
                r = run("--seed", 3, "--out", out, "--quiet", cmd)
                self.assertEqual(r.returncode, 0, r.stderr)
            outputs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
        self.assertEqual(outputs[0], outputs[1])

        out = self.dir / "a"
        kin = rows(out / "kinematics.csv")
        self.assertEqual(len(kin), 8)
        self.assertEqual([float(k["load_n"]) for k in kin], [0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
        t = [float(k["t_mag_mm"]) for k in kin]
        self.assertEqual(t, sorted(t))
        fits = rows(out / "fits.csv")
        self.assertEqual(len(fits), 2)
        self.assertTrue(all(float(f["r2"]) >= 0.95 for f in fits))


if __name__ == "__main__":
    EXE = os.path.abspath(sys.argv.pop(1))
    unittest.main(verbosity=2)
