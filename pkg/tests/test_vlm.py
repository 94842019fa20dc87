"""HTTP transport with retries, scripted backends, point matching, selection."""

import base64
import json

import httpx
import numpy as np
import pytest

from graspselect.errors import (AmbiguousReply, AuthError, ConfigError,
                                EmptyInput, ModelError, TransportError,
                                UnparseableReply, VlmPointOffObject,
                                VlmTimeout)
from graspselect.geometry import PointCloud, project_many
from graspselect.prompting import (QueryBundle, Strategy, build_query,
                                   decode_png)
from graspselect.vlm import (AuditRecord, MatchConfig, ScriptedVlm,
                             SelectConfig, SequenceVlm, VlmEndpointConfig,
                             append_audit, build_request, match_point_to_grasp,
                             query, select_grasp)

from conftest import make_candidates


def text_bundle(prompt="hello", strategy=Strategy.CPG):
    img = np.zeros((8, 8, 3), dtype=np.uint8)
    return QueryBundle(images=(img,), prompt=prompt, strategy=strategy,
                       candidate_order=())


def ok_response(content="fine"):
    return httpx.Response(200, json={
        "choices": [{"message": {"content": content}}]})


def make_client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


ENDPOINT = VlmEndpointConfig(base_url="https://vlm.example/chat",
                             model_name="test-model", max_retries=2,
                             retry_backoff_seconds=0.5)


class TestBuildRequest:
    def test_structure(self):
        bundle = text_bundle("the prompt")
        body = build_request(bundle, "m")
        assert body["model"] == "m"
        content = body["messages"][0]["content"]
        assert content[0] == {"type": "text", "text": "the prompt"}
        img = decode_png(base64.b64decode(content[1]["data"]))
        assert np.array_equal(img, bundle.images[0])


class TestQueryRetries:
    def test_success_first_try(self):
        calls = []

        def handler(request):
            calls.append(json.loads(request.content))
            return ok_response("answer")

        with make_client(handler) as client:
            assert query(text_bundle(), ENDPOINT, client=client) == "answer"
        assert len(calls) == 1

    def test_retries_5xx_with_backoff(self):
        sleeps, n = [], {"count": 0}

        def handler(request):
            n["count"] += 1
            return httpx.Response(503) if n["count"] < 3 else ok_response("ok")

        with make_client(handler) as client:
            out = query(text_bundle(), ENDPOINT, client=client,
                        sleep=sleeps.append)
        assert out == "ok"
        assert sleeps == [0.5, 1.0]  # exponential backoff

    def test_retry_exhaustion_raises_last_error(self):
        with make_client(lambda r: httpx.Response(500)) as client:
            with pytest.raises(ModelError):
                query(text_bundle(), ENDPOINT, client=client, sleep=lambda s: None)

    def test_timeout_retried_then_raised(self):
        def handler(request):
            raise httpx.ReadTimeout("slow")

        with make_client(handler) as client:
            with pytest.raises(VlmTimeout):
                query(text_bundle(), ENDPOINT, client=client, sleep=lambda s: None)

    def test_transport_error_retried_then_raised(self):
        def handler(request):
            raise httpx.ConnectError("refused")

        with make_client(handler) as client:
            with pytest.raises(TransportError):
                query(text_bundle(), ENDPOINT, client=client, sleep=lambda s: None)

    def test_auth_errors_never_retry(self):
        calls = {"count": 0}

        def handler(request):
            calls["count"] += 1
            return httpx.Response(401)

        with make_client(handler) as client:
            with pytest.raises(AuthError):
                query(text_bundle(), ENDPOINT, client=client)
        assert calls["count"] == 1

    def test_4xx_never_retries(self):
        calls = {"count": 0}

        def handler(request):
            calls["count"] += 1
            return httpx.Response(422, text="bad request")

        with make_client(handler) as client:
            with pytest.raises(ModelError):
                query(text_bundle(), ENDPOINT, client=client)
        assert calls["count"] == 1

    def test_malformed_body(self):
        with make_client(lambda r: httpx.Response(200, json={"oops": 1})) as client:
            with pytest.raises(ModelError):
                query(text_bundle(), ENDPOINT, client=client)

    def test_api_key_from_env(self, monkeypatch):
        endpoint = VlmEndpointConfig(base_url="https://vlm.example/chat",
                                     model_name="m",
                                     api_key_env_var_name="VLM_TEST_KEY")
        seen = {}

        def handler(request):
            seen["auth"] = request.headers.get("Authorization")
            return ok_response()

        monkeypatch.setenv("VLM_TEST_KEY", "sekrit")
        with make_client(handler) as client:
            query(text_bundle(), endpoint, client=client)
        assert seen["auth"] == "Bearer sekrit"

    def test_missing_api_key(self, monkeypatch):
        monkeypatch.delenv("VLM_TEST_KEY", raising=False)
        endpoint = VlmEndpointConfig(base_url="https://vlm.example/chat",
                                     model_name="m",
                                     api_key_env_var_name="VLM_TEST_KEY")
        with pytest.raises(AuthError):
            query(text_bundle(), endpoint)


class TestScriptedVlm:
    def test_rule_kinds(self):
        vlm = ScriptedVlm(rules=(
            (Strategy.GSI, "by-strategy"),
            ("handle", "by-substring"),
            (lambda b: len(b.images) == 2, "by-callable"),
        ), default="fallback")
        gsi = QueryBundle(images=(np.zeros((4, 4, 3), dtype=np.uint8),),
                          prompt="x", strategy=Strategy.GSI,
                          candidate_order=(0,))
        assert vlm.complete(gsi) == "by-strategy"
        assert vlm.complete(text_bundle("grab the handle")) == "by-substring"
        assert vlm.complete(text_bundle("nothing")) == "fallback"

    def test_from_file(self, tmp_path):
        path = tmp_path / "rules.json"
        path.write_text(json.dumps({
            "rules": [{"match": "mug", "respond": '{"choice": 1}'}],
            "default": '{"choice": 2}'}))
        vlm = ScriptedVlm.from_file(path)
        assert vlm.complete(text_bundle("pick up the mug")) == '{"choice": 1}'
        assert vlm.complete(text_bundle("other")) == '{"choice": 2}'

    def test_sequence_vlm_replays(self):
        vlm = SequenceVlm(["a", "b"])
        b = text_bundle()
        assert [vlm.complete(b) for _ in range(3)] == ["a", "b", "b"]


class TestMatchPointToGrasp:
    def scene(self, rng, intr, n_points=200, n_reps=4):
        pts = np.column_stack([rng.uniform(-0.2, 0.2, n_points),
                               rng.uniform(-0.15, 0.15, n_points),
                               rng.uniform(0.4, 0.8, n_points)])
        pixels = project_many(pts, intr)
        cloud = PointCloud(points=pts, pixels=pixels)
        contacts = pts[rng.choice(n_points, n_reps, replace=False)]
        reps = make_candidates(contacts, rng.uniform(0.2, 0.9, n_reps))
        return cloud, reps

    def test_matches_double_argmin_oracle(self, intr):
        rng = np.random.default_rng(11)
        for _ in range(20):
            cloud, reps = self.scene(rng, intr)
            px = tuple(cloud.pixels[int(rng.integers(len(cloud)))]
                       + rng.uniform(-3, 3, 2))
            proj = project_many(cloud.points, intr)
            d = np.hypot(proj[:, 0] - px[0], proj[:, 1] - px[1])
            nearest = int(np.argmin(d))
            d3 = np.linalg.norm(reps.contacts() - cloud.points[nearest], axis=1)
            expected = reps[int(np.argmin(d3))]
            got = match_point_to_grasp(px, cloud, reps, intr)
            assert got.id == expected.id

    def test_off_object_rejected(self, intr):
        cloud = PointCloud(points=np.array([[0.0, 0.0, 0.5]]),
                           pixels=np.array([[160.0, 120.0]]))
        reps = make_candidates([[0.0, 0.0, 0.5]], [0.5])
        threshold = MatchConfig().threshold(intr.width)
        with pytest.raises(VlmPointOffObject):
            match_point_to_grasp((160.0 + threshold + 1, 120.0), cloud, reps, intr)
        # Just inside the threshold is accepted.
        match_point_to_grasp((160.0 + threshold - 1, 120.0), cloud, reps, intr)

    def test_threshold_scales_with_width(self):
        assert MatchConfig().threshold(640) == pytest.approx(20.0)
        assert MatchConfig().threshold(320) == pytest.approx(10.0)

    def test_empty_inputs(self, intr):
        reps = make_candidates([[0, 0, 0.5]], [0.5])
        with pytest.raises(EmptyInput):
            match_point_to_grasp((0, 0), PointCloud(points=np.empty((0, 3))),
                                 reps, intr)

    def test_tie_breaks_to_lower_index(self, intr):
        # Two identical cloud points and two reps equidistant from them.
        cloud = PointCloud(points=np.array([[0.0, 0.0, 0.5], [0.0, 0.0, 0.5]]),
                           pixels=np.array([[160.0, 120.0], [160.0, 120.0]]))
        reps = make_candidates([[0.01, 0.0, 0.5], [-0.01, 0.0, 0.5]],
                               [0.5, 0.5])
        got = match_point_to_grasp((160.0, 120.0), cloud, reps, intr)
        assert got.id == 0


class TestSelectGrasp:
    def reps(self):
        contacts = [[0.02 * i, 0.0, 0.5] for i in range(3)]
        return make_candidates(contacts, [0.9, 0.8, 0.7])

    def image(self):
        return np.zeros((240, 320, 3), dtype=np.uint8)

    def test_choice_resolution(self, intr):
        backend = ScriptedVlm(default='{"choice": 2}')
        chosen, audit = select_grasp(self.image(), self.reps(), "task",
                                     Strategy.GSI, backend, intr)
        assert chosen.id == 1
        assert audit.parsed == '{"choice": 2}'
        assert audit.chosen_id == 1
        assert not audit.used_fallback
        assert len(audit.image_hashes) == 1

    def test_reprompt_recovers(self, intr):
        backend = SequenceVlm(["no idea", "still unsure", '{"choice": 1}'])
        chosen, audit = select_grasp(self.image(), self.reps(), "task",
                                     Strategy.GSI, backend, intr)
        assert chosen.id == 0
        assert len(audit.attempts) == 3

    def test_reprompt_limit_then_raises(self, intr):
        backend = SequenceVlm(["nope"])
        with pytest.raises(UnparseableReply):
            select_grasp(self.image(), self.reps(), "task", Strategy.GSI,
                         backend, intr)

    def test_fallback_to_top_confidence(self, intr):
        backend = SequenceVlm(["nope"])
        cfg = SelectConfig(fallback_to_top_confidence=True)
        chosen, audit = select_grasp(self.image(), self.reps(), "task",
                                     Strategy.GSI, backend, intr, cfg=cfg)
        assert chosen.id == 0  # highest confidence
        assert audit.used_fallback
        assert audit.parsed == ""

    def test_ambiguous_reply_triggers_reprompt(self, intr):
        backend = SequenceVlm(["grasp 1 or grasp 2", '{"choice": 3}'])
        chosen, _ = select_grasp(self.image(), self.reps(), "task",
                                 Strategy.GSI, backend, intr)
        assert chosen.id == 2

    def test_cpg_needs_cloud(self, intr):
        backend = ScriptedVlm(default='{"point": [160, 120]}')
        with pytest.raises(ConfigError):
            select_grasp(self.image(), self.reps(), "task", Strategy.CPG,
                         backend, intr)

    def test_cpg_end_to_end(self, intr):
        reps = self.reps()
        pts = reps.contacts()
        pixels = project_many(pts, intr)
        cloud = PointCloud(points=pts, pixels=pixels)
        target = pixels[2]
        backend = ScriptedVlm(
            default=json.dumps({"point": [float(target[0]), float(target[1])]}))
        chosen, audit = select_grasp(self.image(), reps, "task", Strategy.CPG,
                                     backend, intr, cloud=cloud)
        assert chosen.id == reps[2].id

    def test_empty_reps(self, intr):
        from graspselect.candidates import CandidateSet
        backend = ScriptedVlm(default='{"choice": 1}')
        with pytest.raises(EmptyInput):
            select_grasp(self.image(), CandidateSet(candidates=()), "task",
                         Strategy.GSI, backend, intr)


class TestAudit:
    def record(self):
        return AuditRecord(strategy="GSI", prompt="p", image_hashes=("abc",),
                           attempts=("raw",), parsed='{"choice": 1}',
                           chosen_id=4)

    def test_dict_round_trip(self):
        rec = self.record()
        assert AuditRecord.from_dict(rec.to_dict()) == rec

    def test_append_is_json_lines(self, tmp_path):
        path = tmp_path / "audit.jsonl"
        append_audit(self.record(), path)
        append_audit(self.record(), path)
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert json.loads(lines[0])["chosen_id"] == 4
