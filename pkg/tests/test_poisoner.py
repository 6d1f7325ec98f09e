import json
from fractions import Fraction
from math import floor

import numpy as np
import pytest

from audiotrojan.audio import load_wav
from audiotrojan.errors import CapacityError, DataError, InvalidVariantError
from audiotrojan.pbsm import apply_pitch_only
from audiotrojan.plan import PoisonPlan, VsvcConfig
from audiotrojan.poisoner import (BuildFailed, DatasetManifest, ManifestEntry, build_attack_testset,
                                  build_poisoned_dataset, load_manifest, load_poisoned_manifest,
                                  output_name, poison_label, sample_poison_subsets, subset_size)
from audiotrojan.toy import SPC10


def fake_manifest(n, num_classes=10):
    return DatasetManifest(
        tuple(ManifestEntry(f"id{i:06d}", f"c/{i}.wav", i % num_classes) for i in range(n)), num_classes
    )


def pbsm_plan(**kw):
    base = dict(trigger="pbsm", mode="all_to_one", targets=["left"], rates=[0.25], seed=0,
                classes=SPC10)
    base.update(kw)
    return PoisonPlan(**base)


class TestSubsetSize:
    @pytest.mark.parametrize("rate,n,expected", [(0.01, 23726, 237), (1.0, 50, 50), (0.29, 100, 29),
                                                 (0.01, 99, 0), (0.25, 20, 5)])
    def test_floor(self, rate, n, expected):
        assert subset_size(rate, n) == expected


class TestSampling:
    def test_large_corpus_size(self):
        part = sample_poison_subsets(fake_manifest(23726), PoisonPlan(targets=[0], rates=[0.01]))
        assert len(part.poisoned[0]) == 237
        assert len(part.benign) == 23726 - 237

    def test_everything_poisoned(self):
        part = sample_poison_subsets(fake_manifest(40), PoisonPlan(targets=[0], rates=[1.0]))
        assert len(part.poisoned[0]) == 40 and part.benign == ()

    def test_multi_disjoint(self):
        plan = PoisonPlan(trigger="vsvc", targets=[1, 2, 3], rates=[0.1, 0.2, 0.3], seed=7)
        m = fake_manifest(100)
        part = sample_poison_subsets(m, plan)
        sets = [set(s) for s in part.poisoned]
        assert [len(s) for s in sets] == [10, 20, 30]
        assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
        assert set(part.benign) | set().union(*sets) == {e.sample_id for e in m.entries}

    def test_seed_controls_draw(self):
        m = fake_manifest(200)
        a = sample_poison_subsets(m, PoisonPlan(targets=[0], rates=[0.1], seed=1))
        b = sample_poison_subsets(m, PoisonPlan(targets=[0], rates=[0.1], seed=1))
        c = sample_poison_subsets(m, PoisonPlan(targets=[0], rates=[0.1], seed=2))
        assert a == b
        assert a.poisoned != c.poisoned

    def test_independent_of_manifest_order(self):
        m = fake_manifest(300)
        rev = DatasetManifest(tuple(reversed(m.entries)), 10)
        plan = PoisonPlan(targets=[0], rates=[0.05], seed=3)
        assert set(sample_poison_subsets(m, plan).poisoned[0]) == set(sample_poison_subsets(rev, plan).poisoned[0])

    def test_clean_label_draws_from_target(self):
        m = fake_manifest(200)
        part = sample_poison_subsets(m, PoisonPlan(mode="clean_label", targets=[4], rates=[0.05]))
        labels = {e.sample_id: e.label for e in m.entries}
        assert len(part.poisoned[0]) == 10
        assert {labels[s] for s in part.poisoned[0]} == {4}

    def test_clean_label_capacity(self):
        with pytest.raises(CapacityError):
            sample_poison_subsets(fake_manifest(200), PoisonPlan(mode="clean_label", targets=[4], rates=[0.2]))


class TestLabels:
    def test_examples(self):
        assert poison_label(3, "all_to_one", 4, 10) == 4
        assert poison_label(9, "all_to_all", None, 10) == 0
        assert poison_label(4, "clean_label", 4, 10) == 4


class TestManifestIO:
    def test_class_names(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("sample_id,path,label\na,a.wav,left\nb,b.wav,2\n")
        m = load_manifest(p, classes=SPC10)
        assert [e.label for e in m.entries] == [4, 2]
        assert m.num_classes == 10

    @pytest.mark.parametrize("text", ["id,path,label\na,a.wav,0\n", "sample_id,path,label\n",
                                      "sample_id,path,label\na,a.wav,zebra\n",
                                      "sample_id,path,label\na,a.wav,0\na,b.wav,1\n"])
    def test_bad(self, tmp_path, text):
        p = tmp_path / "m.csv"
        p.write_text(text)
        with pytest.raises(DataError):
            load_manifest(p)

    def test_output_name(self):
        e = ManifestEntry("left/x", "left/x.wav", 4)
        assert output_name(e, "poisoned_1").as_posix() == "left/x__poisoned_1.wav"
        e = ManifestEntry("a/../b", "/abs/x.wav", 4)
        assert output_name(e, "poisoned_2").as_posix() == "a/b__poisoned_2.wav"


class TestBuild:
    def test_toy_counts(self, toy_corpus, tmp_path):
        res = build_poisoned_dataset(toy_corpus, pbsm_plan(), tmp_path / "out")
        subsets = res.manifest.subsets()
        assert len(subsets["poisoned_1"]) == 5 and len(subsets["benign"]) == 15
        back = load_poisoned_manifest(tmp_path / "out" / "manifest.csv")
        assert back.to_csv() == res.manifest.to_csv()
        for e in back.entries:
            if e.subset == "benign":
                assert e.label == e.ground_truth
                assert load_wav(back.resolve(e))
            else:
                assert e.label == 4
                assert e.trigger_meta["sampler"] == "sha256-rank/v1"
                src = toy_corpus.resolve(next(x for x in toy_corpus.entries if x.sample_id == e.sample_id))
                assert not np.array_equal(load_wav(back.resolve(e)).samples, load_wav(src).samples)

    def test_rate_below_one_sample(self, toy_corpus, tmp_path):
        res = build_poisoned_dataset(toy_corpus, pbsm_plan(rates=[0.01]), tmp_path / "o")
        assert set(res.manifest.subsets()) == {"benign"}

    def test_parallel_matches_serial(self, toy_corpus, tmp_path):
        a = build_poisoned_dataset(toy_corpus, pbsm_plan(), tmp_path / "a", jobs=1)
        b = build_poisoned_dataset(toy_corpus, pbsm_plan(), tmp_path / "b", jobs=2)
        assert a.manifest.to_csv() == b.manifest.to_csv()
        for e in a.manifest.entries:
            if e.subset != "benign":
                assert (tmp_path / "a" / e.path).read_bytes() == (tmp_path / "b" / e.path).read_bytes()

    def test_vsvc_multi_backdoor(self, toy_corpus, tmp_path):
        plan = PoisonPlan(trigger="vsvc", targets=["left", "up", "go"], rates=[0.1, 0.1, 0.1],
                          classes=SPC10, seed=5)
        res = build_poisoned_dataset(toy_corpus, plan, tmp_path / "v")
        subsets = res.manifest.subsets()
        assert [len(subsets[f"poisoned_{b}"]) for b in (1, 2, 3)] == [2, 2, 2]
        by_b = {}
        for e in res.manifest.entries:
            if e.backdoor:
                by_b.setdefault(e.backdoor, set()).add((e.label, e.trigger_meta["timbre_id"]))
        assert by_b == {1: {(4, "timbre_1")}, 2: {(2, "timbre_2")}, 3: {(9, "timbre_3")}}

    def test_vsvc_uses_embeddings(self, toy_corpus, tmp_path):
        emb = tmp_path / "e.csv"
        emb.write_text("id,v0\nA,0\nB,1\nC,5\nD,6\n")
        plan = PoisonPlan(trigger="vsvc", targets=[1, 2], rates=[0.1, 0.1], classes=SPC10,
                          vsvc=VsvcConfig(embeddings=str(emb)))
        res = build_poisoned_dataset(toy_corpus, plan, tmp_path / "v")
        ids = {e.backdoor: e.trigger_meta["timbre_id"] for e in res.manifest.entries if e.backdoor}
        assert ids == {1: "A", 2: "D"}

    def test_missing_source(self, toy_corpus, tmp_path):
        entries = list(toy_corpus.entries)
        plan = pbsm_plan(rates=[1.0])
        entries[3] = ManifestEntry(entries[3].sample_id, "nope/missing.wav", entries[3].label)
        broken = DatasetManifest(tuple(entries), 10, toy_corpus.root)
        with pytest.raises(BuildFailed, match="missing.wav") as info:
            build_poisoned_dataset(broken, plan, tmp_path / "x")
        assert info.value.exit_code == 2
        res = build_poisoned_dataset(broken, plan, tmp_path / "y", keep_going=True)
        assert len(res.manifest) == 19 and len(res.errors) == 1


@pytest.fixture(scope="module")
def ten_clip_testset(toy_corpus):
    left = [e for e in toy_corpus.entries if e.label == 4]
    others = [e for e in toy_corpus.entries if e.label != 4][::2][:8]
    entries = tuple(ManifestEntry(e.sample_id, str(toy_corpus.resolve(e)), e.label) for e in left + others)
    return DatasetManifest(entries, 10)


class TestAttackTestset:
    def test_exclusion(self, ten_clip_testset, tmp_path):
        res = build_attack_testset(ten_clip_testset, pbsm_plan(), out_dir=tmp_path)
        assert len(res.manifest) == 10
        assert sum(e.excluded_from_asr for e in res.manifest.entries) == 2
        assert all(e.label == 4 for e in res.manifest.entries)

    def test_include_target(self, ten_clip_testset, tmp_path):
        res = build_attack_testset(ten_clip_testset, pbsm_plan(exclude_target_from_asr=False), out_dir=tmp_path)
        assert not any(e.excluded_from_asr for e in res.manifest.entries)

    def test_all_to_all(self, ten_clip_testset, tmp_path):
        plan = pbsm_plan(mode="all_to_all", targets=[])
        res = build_attack_testset(ten_clip_testset, plan, out_dir=tmp_path)
        assert all(e.label == (e.ground_truth + 1) % 10 for e in res.manifest.entries)
        assert not any(e.excluded_from_asr for e in res.manifest.entries)

    def test_pitch_only(self, ten_clip_testset, tmp_path):
        plan = pbsm_plan()
        res = build_attack_testset(ten_clip_testset, plan, "pitch-only", tmp_path)
        e = res.manifest.entries[0]
        src = load_wav(ten_clip_testset.entries[0].path)
        got = load_wav(res.manifest.resolve(e)).samples
        assert np.max(np.abs(got - apply_pitch_only(src, plan.pbsm).samples)) <= 0.5 / 32768 + 1e-12
        assert e.trigger_meta["variant"] == "pitch_only"

    def test_pitch_only_rejected_for_vsvc(self, ten_clip_testset, tmp_path):
        plan = PoisonPlan(trigger="vsvc", targets=[1], rates=[0.1])
        with pytest.raises(InvalidVariantError):
            build_attack_testset(ten_clip_testset, plan, "pitch_only", tmp_path)

    def test_unknown_variant(self, ten_clip_testset, tmp_path):
        with pytest.raises(InvalidVariantError):
            build_attack_testset(ten_clip_testset, pbsm_plan(), "loud", tmp_path)

    def test_multi_backdoor_ids(self, ten_clip_testset, tmp_path):
        plan = PoisonPlan(trigger="vsvc", targets=[1, 2], rates=[0.1, 0.1], classes=SPC10)
        res = build_attack_testset(ten_clip_testset, plan, out_dir=tmp_path)
        assert len(res.manifest) == 20
        assert res.manifest.entries[0].sample_id.endswith("@1")
        assert res.manifest.entries[-1].sample_id.endswith("@2")


def test_rate_law_matches_fraction_oracle():
    for rate in (0.01, 0.07, 0.1, 0.29, 0.3, 0.33):
        for n in (7, 100, 1000, 23726):
            assert subset_size(rate, n) == floor(Fraction(str(rate)) * n)


def test_meta_is_json(toy_corpus, tmp_path):
    build_poisoned_dataset(toy_corpus, pbsm_plan(), tmp_path)
    rows = (tmp_path / "manifest.csv").read_text().splitlines()[1:]
    poisoned = [r for r in rows if ",poisoned_1," in r]
    meta = json.loads(poisoned[0].split(",false,", 1)[1].strip('"').replace('""', '"'))
    assert meta["semitones"] == 5 and meta["backdoor"] == 1
