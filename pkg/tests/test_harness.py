"""Scoring functions, oracle backends and the evaluation loop."""

import numpy as np
import pytest

from graspselect import corpus, harness
from graspselect.candidates import GraspCandidate
from graspselect.errors import GraspSelectError
from graspselect.geometry import GraspPose, GripperGeometry, rotation_about
from graspselect.harness import (ALL_STRATEGIES, BASELINE, AdversarialPolicy,
                                 EvaluationReport, HarnessConfig,
                                 OmniscientPolicy, TrialOutcome,
                                 check_compliance, compare_k_sweep,
                                 grasp_success_proxy, prepare_trial,
                                 run_trials, sweep_to_csv)
from graspselect.prompting import Strategy
from graspselect.scenes import TaskSpec

from conftest import pose_at


def cand_at(contact, rotation=None, conf=0.5, cid=0):
    pose = pose_at(contact, rotation=rotation)
    return GraspCandidate(pose=pose, confidence=conf,
                          contact=np.asarray(contact, dtype=np.float64), id=cid)


class TestCheckCompliance:
    def test_require_polarity(self, barbell_object):
        task = TaskSpec(description="d", category="handover",
                        target_region="hi")
        on_hi = cand_at([0.0, 0.0, 0.155])
        on_lo = cand_at([0.0, 0.0, 0.025])
        assert check_compliance(on_hi, task, barbell_object)
        assert not check_compliance(on_lo, task, barbell_object)

    def test_avoid_polarity(self, barbell_object):
        task = TaskSpec(description="d", category="handover",
                        target_region="hi", polarity="avoid")
        assert not check_compliance(cand_at([0.0, 0.0, 0.155]), task,
                                    barbell_object)
        assert check_compliance(cand_at([0.0, 0.0, 0.025]), task,
                                barbell_object)


class TestGraspSuccessProxy:
    def test_good_sphere_pinch(self, sphere_object):
        # Closing axis through the sphere center: antipodal by symmetry.
        c = cand_at([0.0, 0.0, 0.0], rotation=np.eye(3))
        assert grasp_success_proxy(c, sphere_object)

    def test_contact_off_object_fails(self, sphere_object):
        c = cand_at([0.2, 0.0, 0.0], rotation=np.eye(3))
        assert not grasp_success_proxy(c, sphere_object)

    def test_too_wide_fails(self):
        from graspselect.primitives import Part, PrimitiveObject, Sphere
        fat = PrimitiveObject(name="fat",
                              parts=(Part(shape=Sphere(radius=0.06)),))
        c = cand_at([0.0, 0.0, 0.0], rotation=np.eye(3))
        assert not grasp_success_proxy(c, fat)  # 12 cm chord > 8 cm jaws

    def test_skewed_closing_axis_fails(self, sphere_object):
        # Closing axis grazing the sphere edge: normals far from antipodal.
        rot = rotation_about([0, 0, 1], np.radians(60))
        c = cand_at([0.028, 0.0, 0.0], rotation=rot)
        assert not grasp_success_proxy(c, sphere_object)


class TestRates:
    def test_example_arithmetic(self):
        pairs = [(True, True), (True, False), (False, True), (True, True)]
        outcomes = tuple(
            TrialOutcome(trial_id=i, scene="s", category="tool-use",
                         strategy="GSI", grasp_success=g, task_compliant=t,
                         chosen_id=i)
            for i, (g, t) in enumerate(pairs))
        rates = EvaluationReport(outcomes=outcomes).overall()
        assert rates["grasp_success_rate"] == pytest.approx(0.75)
        assert rates["task_compliance_rate"] == pytest.approx(0.75)
        assert rates["combined_success_rate"] == pytest.approx(0.5)

    def test_csv_layout(self):
        outcomes = (TrialOutcome(trial_id=0, scene="s", category="handover",
                                 strategy="GSI", grasp_success=True,
                                 task_compliant=False, chosen_id=1),)
        csv_text = EvaluationReport(outcomes=outcomes).to_csv()
        lines = csv_text.splitlines()
        assert lines[0] == ("strategy,grasp_success_rate,task_compliance_rate,"
                            "combined_success_rate,trials")
        assert lines[1] == "GSI,1.000000,0.000000,0.000000,1"


@pytest.fixture(scope="module")
def scenes():
    return corpus.corpus_scenes()[:3]


class TestRunTrials:

    def test_omniscient_compliant(self, scenes):
        report, artifacts = run_trials(scenes, [Strategy.GSI],
                                       OmniscientPolicy(), HarnessConfig())
        by = report.by_strategy()
        assert by["GSI"]["task_compliance_rate"] == 1.0
        assert BASELINE in by
        assert all(a.audit is not None for a in artifacts
                   if a.outcome.strategy == "GSI")

    def test_adversarial_noncompliant(self, scenes):
        cfg = HarnessConfig(include_baseline=False)
        report, _ = run_trials(scenes, [Strategy.CPMI], AdversarialPolicy(), cfg)
        assert report.by_strategy()["CPMI"]["task_compliance_rate"] == 0.0

    def test_backend_error_contained(self, scenes):
        class Exploding:
            def complete(self, bundle):
                raise GraspSelectError("backend down")

        report, artifacts = run_trials(scenes[:1], [Strategy.GSI], Exploding(),
                                       HarnessConfig(include_baseline=False))
        outcome = report.outcomes[0]
        assert outcome.error == "Error"
        assert not outcome.grasp_success and not outcome.task_compliant
        assert artifacts[0].audit is None

    def test_scene_without_task_rejected(self, scenes):
        from dataclasses import replace
        bare = replace(scenes[0], task=None)
        with pytest.raises(GraspSelectError):
            run_trials([bare], [Strategy.GSI], OmniscientPolicy())

    def test_deterministic(self, scenes):
        a, _ = run_trials(scenes, [Strategy.GSI, Strategy.CPG],
                          OmniscientPolicy(), HarnessConfig(seed=3))
        b, _ = run_trials(scenes, [Strategy.GSI, Strategy.CPG],
                          OmniscientPolicy(), HarnessConfig(seed=3))
        assert a.to_json() == b.to_json()

    def test_prepare_trial_outputs(self, scenes):
        cfg = HarnessConfig()
        obs, cloud, obj, filtered, reps = prepare_trial(scenes[0], cfg, 1)
        assert obs.rgb.shape[2] == 3
        assert len(cloud) > 0
        assert 0 < len(reps) <= 3
        assert len(filtered) >= len(reps)


class TestKSweep:
    def test_rows_and_csv(self):
        scenes = corpus.corpus_scenes()[:2]
        rows = compare_k_sweep(scenes, [1, 2], OmniscientPolicy(),
                               HarnessConfig())
        assert [r["k"] for r in rows] == [1, 2]
        csv_text = sweep_to_csv(rows)
        assert csv_text.splitlines()[0].startswith("k,grasp_success_rate")

    def test_requires_ascending_k(self):
        with pytest.raises(GraspSelectError):
            compare_k_sweep([], [3, 1], OmniscientPolicy())


class TestCorpus:
    def test_ten_scenes_with_tasks(self):
        scenes = corpus.corpus_scenes()
        assert len(scenes) == 10
        names = [s.name for s in scenes]
        assert len(set(names)) == 10
        for scene in scenes:
            assert scene.task is not None
            assert scene.task.target_region in scene.target_object().regions

    def test_all_categories_covered(self):
        cats = {s.task.category for s in corpus.corpus_scenes()}
        assert cats == {"specific-position", "tool-use", "handover"}

    def test_build_corpus_manifest(self, tmp_path):
        manifest = corpus.build_corpus(tmp_path)
        paths = corpus.load_manifest(manifest)
        assert len(paths) == 10
        assert all(p.exists() for p in paths)
