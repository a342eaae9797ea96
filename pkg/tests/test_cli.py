"""
Tests for the darkstore command line: exit codes and the files each
subcommand writes.
"""

import unittest
import json
import os
import shutil
import sys
import tempfile
from unittest.mock import patch

from PIL import Image

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import darkstore
from darkstore import EXIT_INVALID, EXIT_OK, EXIT_USAGE, cli
from geometry import GeometryError, Pose3
from layout import validate_layout
from mesh_io import box_mesh, write_obj
from scene_io import AssetEntry, load_scene, manifest_to_dict, read_json, state_to_dict, write_json
import store_config
from task_eval import SceneState, TaskKind, TaskSpec, basket_region

SMALL_CONFIG = {
    "store": {"width": 10.0, "depth": 8.0},
    "layout": {"n_seed_fixtures": 1},
    "lod": {"n_samples": 1024, "cell_fractions": [0.02, 0.08]},
    "logging": {"level": "WARNING"},
}


class CliTestCase(unittest.TestCase):

    def setUp(self):
        self.test_dir = tempfile.mkdtemp()
        self.config = self.path("config.json")
        with open(self.config, "w", encoding="utf-8") as f:
            json.dump(SMALL_CONFIG, f)

    def tearDown(self):
        # drop the rotating handler before the temp dir goes
        darkstore.setup_logging("WARNING")
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def path(self, name):
        return os.path.join(self.test_dir, name)

    def run_cli(self, *argv):
        return cli(["--config", self.config, *argv])

    def arranged_scene(self, seed=3):
        scene = self.path("scene.json")
        self.run_cli("gen", "--seed", str(seed), "--out", scene)
        self.assertEqual(self.run_cli("arrange", "--scene", scene), EXIT_OK)
        return scene


class TestUsage(unittest.TestCase):

    def test_help_exits_zero(self):
        self.assertEqual(cli(["--help"]), EXIT_OK)

    def test_unknown_subcommand(self):
        self.assertEqual(cli(["teleport"]), EXIT_USAGE)

    def test_missing_required_flag(self):
        self.assertEqual(cli(["arrange"]), EXIT_USAGE)

    def test_task_choices(self):
        self.assertEqual(cli(["plan", "--scene", "x.json", "--task", "composite"]), EXIT_USAGE)


class TestGen(CliTestCase):

    def test_writes_scene(self):
        out = self.path("scene.json")

        code = self.run_cli("gen", "--seed", "3", "--out", out)

        scene = load_scene(out)
        config = store_config.load_config(self.config)
        report = validate_layout(scene.layout, store_config.layout_params(config, 3))
        self.assertEqual(code, EXIT_OK if report.ok else EXIT_INVALID)
        self.assertEqual(scene.root_seed, 3)
        self.assertIsNone(scene.arrangement)
        self.assertEqual(scene.layout.store.walls.bounds(), (0.0, 0.0, 10.0, 8.0))

    def test_same_seed_same_bytes(self):
        first, second = self.path("a.json"), self.path("b.json")

        self.run_cli("gen", "--seed", "11", "--out", first)
        self.run_cli("gen", "--seed", "11", "--out", second)

        with open(first, "rb") as f1, open(second, "rb") as f2:
            self.assertEqual(f1.read(), f2.read())

    def test_bad_config(self):
        with open(self.config, "w", encoding="utf-8") as f:
            json.dump({"arrangement": {"min_facings": 6, "max_facings": 2}}, f)

        self.assertEqual(self.run_cli("gen", "--out", self.path("scene.json")), EXIT_USAGE)
        self.assertFalse(os.path.exists(self.path("scene.json")))

    def test_malformed_config(self):
        with open(self.config, "w", encoding="utf-8") as f:
            f.write("{")

        self.assertEqual(self.run_cli("gen", "--out", self.path("scene.json")), EXIT_USAGE)

    def test_internal_error_is_not_usage(self):
        with patch.object(darkstore, "build_layout", side_effect=GeometryError("polygon has zero area")):
            code = self.run_cli("gen", "--out", self.path("scene.json"))

        self.assertEqual(code, EXIT_INVALID)

    def test_log_file(self):
        log_file = self.path("darkstore.log")

        self.run_cli("--log-file", log_file, "gen", "--out", self.path("scene.json"))

        with open(log_file, encoding="utf-8") as f:
            self.assertIn("DARKSTORE - gen", f.read())


class TestArrangeAndDeplete(CliTestCase):

    def test_arrange_in_place(self):
        scene = self.arranged_scene()

        arr = load_scene(scene).arrangement

        self.assertIsNotNone(arr)
        self.assertGreater(len(arr.items), 0)

    def test_missing_scene(self):
        self.assertEqual(self.run_cli("arrange", "--scene", self.path("nope.json")), EXIT_USAGE)

    def test_corrupt_scene(self):
        scene = self.path("scene.json")
        with open(scene, "w", encoding="utf-8") as f:
            f.write('{"schema_version": "9.0"}')

        self.assertEqual(self.run_cli("arrange", "--scene", scene), EXIT_USAGE)

    def test_deplete_removes_items(self):
        scene = self.arranged_scene()
        before = len(load_scene(scene).arrangement.items)
        out = self.path("depleted.json")

        code = self.run_cli("deplete", "--scene", scene, "--days", "3", "--rate", "0.5", "--out", out)

        self.assertEqual(code, EXIT_OK)
        self.assertLess(len(load_scene(out).arrangement.items), before)

    def test_negative_days(self):
        scene = self.arranged_scene()

        self.assertEqual(self.run_cli("deplete", "--scene", scene, "--days", "-1"), EXIT_USAGE)

    def test_deplete_needs_arrangement(self):
        scene = self.path("scene.json")
        self.run_cli("gen", "--out", scene)

        self.assertEqual(self.run_cli("deplete", "--scene", scene, "--days", "1"), EXIT_USAGE)


class TestRender(CliTestCase):

    def test_svg_and_png(self):
        scene = self.arranged_scene()
        svg, png = self.path("scene.svg"), self.path("scene.png")

        self.assertEqual(self.run_cli("render", "--scene", scene, "--items", "--out", svg), EXIT_OK)
        self.assertEqual(self.run_cli("render", "--scene", scene, "--format", "png", "--scale", "10",
                                      "--out", png), EXIT_OK)

        with open(svg, encoding="utf-8") as f:
            self.assertIn("<circle", f.read())
        with Image.open(png) as img:
            self.assertEqual(img.size, (110, 90))

    def test_json_layers(self):
        scene = self.arranged_scene()
        out = self.path("scene_layers.json")

        self.assertEqual(self.run_cli("render", "--scene", scene, "--format", "json", "--items", "--out", out),
                         EXIT_OK)

        layers = read_json(out)
        loaded = load_scene(scene)
        self.assertEqual(len(layers["fixtures"]), len(loaded.layout.placements))
        self.assertEqual(len(layers["items"]), len(loaded.arrangement.items))
        self.assertEqual(layers["bounds"], [0, 0, 10, 8])

    def test_glyphs(self):
        scene = self.arranged_scene()
        svg = self.path("field.svg")

        self.assertEqual(self.run_cli("render", "--scene", scene, "--glyphs", "--out", svg), EXIT_OK)

        with open(svg, encoding="utf-8") as f:
            self.assertIn('class="glyph"', f.read())


class TestEval(CliTestCase):

    def write_snapshots(self, scene, placed):
        arr = load_scene(scene).arrangement
        target = arr.items[0]
        basket = basket_region((float(target.pose.position[0]), float(target.pose.position[1]) + 1.0, 0.0))
        before = SceneState.from_arrangement(arr, basket=basket)
        after = before.with_item(target.id, Pose3(basket.center.copy())) if placed else before
        spec = TaskSpec(TaskKind.PICK_TO_BASKET, target.product_id, target_items=(target.id,))
        path = self.path("snapshots.json")
        write_json(path, {"task": spec.to_dict(), "before": state_to_dict(before), "after": state_to_dict(after)})
        return path

    def test_success(self):
        scene = self.arranged_scene()
        out = self.path("record.json")

        code = self.run_cli("eval", "--scene", scene, "--snapshots", self.write_snapshots(scene, True), "--out", out)

        record = read_json(out)
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(record["success"])
        self.assertEqual(record["task"], "pick_to_basket")

    def test_failure_exit_code(self):
        scene = self.arranged_scene()
        out = self.path("record.json")

        code = self.run_cli("eval", "--scene", scene, "--snapshots", self.write_snapshots(scene, False), "--out", out)

        self.assertEqual(code, EXIT_INVALID)
        self.assertFalse(read_json(out)["success"])

    def test_malformed_snapshots(self):
        scene = self.arranged_scene()
        path = self.path("snapshots.json")
        write_json(path, {"task": {"kind": "pick_to_basket", "product_id": "x"}, "before": {}, "after": {}})

        self.assertEqual(self.run_cli("eval", "--scene", scene, "--snapshots", path), EXIT_USAGE)


class TestLod(CliTestCase):

    def test_mesh_outputs(self):
        out_dir = self.path("assets")
        mesh = self.path("crate.obj")
        write_obj(box_mesh((0.3, 0.2, 0.2), divisions=4), mesh)

        code = self.run_cli("lod", "--mesh", mesh, "--out", out_dir)

        self.assertEqual(code, EXIT_OK)
        for name in ("crate.obj", "crate_lod.obj", "manifest.json", "lod_report.json"):
            self.assertTrue(os.path.exists(os.path.join(out_dir, name)), name)
        report = read_json(os.path.join(out_dir, "lod_report.json"))
        self.assertEqual(report["assets"][0]["asset"], "crate")
        self.assertEqual(read_json(os.path.join(out_dir, "manifest.json"))["assets"][0]["lod_mesh"], "crate_lod.obj")

    def write_manifest(self, mesh="crate.obj", dims=(0.3, 0.2, 0.2)):
        src = self.path("src")
        write_obj(box_mesh((0.3, 0.2, 0.2), divisions=4), os.path.join(src, "crate.obj"))
        path = os.path.join(src, "manifest.json")
        write_json(path, manifest_to_dict([AssetEntry("crate", "dry_goods", 1.0, "z up", mesh, "", dims)]))
        return path

    def test_manifest_input(self):
        out_dir = self.path("assets")

        code = self.run_cli("lod", "--manifest", self.write_manifest(), "--out", out_dir)

        self.assertEqual(code, EXIT_OK)
        entry = read_json(os.path.join(out_dir, "manifest.json"))["assets"][0]
        self.assertEqual((entry["id"], entry["category"]), ("crate", "dry_goods"))

    def test_manifest_path_escape(self):
        out_dir = self.path("assets")

        code = self.run_cli("lod", "--manifest", self.write_manifest(mesh="../../crate.obj"), "--out", out_dir)

        self.assertEqual(code, EXIT_USAGE)
        self.assertFalse(os.path.exists(os.path.join(out_dir, "lod_report.json")))

    def test_manifest_wrong_dims(self):
        code = self.run_cli("lod", "--manifest", self.write_manifest(dims=(0.3, 0.2, 0.4)), "--out", self.path("a"))

        self.assertEqual(code, EXIT_USAGE)

    def test_mesh_and_manifest_exclusive(self):
        self.assertEqual(self.run_cli("lod", "--mesh", "a.obj", "--manifest", "m.json"), EXIT_USAGE)


class TestBatch(CliTestCase):

    def test_unknown_scenario(self):
        self.assertEqual(self.run_cli("batch", "--scenario", "on_mars", "--out", self.path("runs")), EXIT_USAGE)

    def test_unknown_task(self):
        self.assertEqual(self.run_cli("batch", "--tasks", "juggle", "--out", self.path("runs")), EXIT_USAGE)

    def test_unknown_task_among_known(self):
        self.assertEqual(self.run_cli("batch", "--tasks", "pick_to_basket", "juggle", "--out", self.path("runs")),
                         EXIT_USAGE)
        self.assertFalse(os.path.exists(os.path.join(self.path("runs"), "trials.jsonl")))

    def test_default_workers(self):
        self.assertGreaterEqual(darkstore.default_workers(), 1)


if __name__ == "__main__":
    unittest.main()
