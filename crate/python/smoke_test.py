"""Smoke test for the preffuse extension module.

Build the extension first:

    cargo build --release -p preffuse-py --features extension-module

The script copies target/{release,debug}/libpreffuse.so next to a temporary
import path unless `preffuse` is already importable.
"""

import json
import math
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def import_preffuse(tmp):
    try:
        import preffuse  # noqa: F401

        return sys.modules["preffuse"]
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = os.path.join(ROOT, "target", profile, "libpreffuse.so")
        if os.path.exists(lib):
            shutil.copy(lib, os.path.join(tmp, "preffuse.so"))
            sys.path.insert(0, tmp)
            import preffuse

            return preffuse
    sys.exit("preffuse extension not built; see the module docstring")


def line(start, end, n=50):
    states = [[start[0] + (end[0] - start[0]) * t / (n - 1), start[1] + (end[1] - start[1]) * t / (n - 1)] for t in range(n)]
    actions = [[0.0, 0.0]] + [[b[0] - a[0], b[1] - a[1]] for a, b in zip(states, states[1:])]
    return states, actions


def main():
    with tempfile.TemporaryDirectory() as tmp:
        pf = import_preffuse(tmp)

        good = pf.Trajectory("good", *line((0.0, 0.0), (0.8, 0.7)))
        idle = pf.Trajectory("idle", *line((0.0, 0.0), (0.05, 0.05)))
        assert len(good) == 50

        kf = pf.extract_keyframes(good)
        assert kf[0] == 1 and kf[-1] == 50 and kf == sorted(set(kf))

        assert pf.scripted_label(good, idle) == 1
        assert pf.scripted_label(idle, good) == 0
        label, scores = pf.fuse_scripted(good, idle)
        assert label == 1, (label, scores)
        assert all(0.0 <= s <= 1.0 for s in scores) and scores[2] == max(scores)

        assert pf.preference_prob(2.0, 2.0) == 0.5
        assert abs(pf.spearman([1, 2, 3], [10, 20, 35]) - 1.0) < 1e-12

        path = os.path.join(tmp, "trajs.jsonl")
        pf.save_trajectories(path, [good, idle])
        back = pf.load_trajectories(path)
        assert [t.id for t in back] == ["good", "idle"]
        assert back[0].states == good.states

        cfg = pf.PipelineConfig.from_toml(
            """
            [experiment]
            rounds = 1
            random_count = 10
            candidate_pool = 40
            heldout_count = 5
            [synthesis]
            foresight_count = 30
            [reward]
            hidden = [16, 16]
            epochs = 3
            learning_rate = 0.003
            ensemble_size = 2
            reward_input = "state"
            queries_per_round = 20
            """
        )
        out = os.path.join(tmp, "run")
        report = pf.run_pipeline(cfg, out)
        assert report.stages[0] == "buffer" and report.stages[-1] == "report"
        assert abs(sum(report.label_distribution) - 1.0) < 1e-9
        assert json.loads(report.to_json())["seed"] == 0

        ens = pf.RewardEnsemble.load(os.path.join(out, "reward_checkpoint.json"))
        assert ens.size == 2
        assert len(ens.reward(good)) == 50
        probs = ens.preference_probs(good, idle)
        assert len(probs) == 2 and all(0.0 <= p <= 1.0 for p in probs)

        try:
            pf.Trajectory("bad", [[0.0, 0.0]], [[0.0, 0.0]])
        except ValueError:
            pass
        else:
            raise AssertionError("a one-step trajectory must be rejected")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
