"""Timeline partitioning, replay sampling, assembly, jobs, registry."""

from __future__ import annotations

import json
from datetime import date

import pytest

from wildharvest.backends import TrainerBackend
from wildharvest.errors import (
    JobRejected,
    LabelConflictError,
    RegistryError,
    SplitLeakageError,
    UndatedEntryError,
    ValidationError,
)
from wildharvest.scheduler import (
    accumulated_pool,
    assign_to_windows,
    assemble_round,
    emit_training_job,
    gen_entries_for_window,
    partition_timeline,
    register_generators,
    registry_from_dict,
    sample_replay,
    subsample_portion,
)
from wildharvest.types import DatasetManifest, UpdateRound

from .conftest import TABLE_REGISTRY, entry


def _manifest(entries, manifest_id="m", round_=1, seed=0):
    return DatasetManifest(
        manifest_id=manifest_id, round=round_, entries=tuple(entries),
        seed=seed, created_at=date(2026, 1, 15),
    )


# -- timeline ----------------------------------------------------------------

def test_quarterly_windows_end_on_calendar_quarter_ends():
    windows = partition_timeline([], anchor_date=date(2025, 1, 1),
                                 interval_months=3, num_windows=4)
    ends = [w.window_end for w in windows]
    assert ends == [date(2025, 3, 31), date(2025, 6, 30),
                    date(2025, 9, 30), date(2025, 12, 31)]
    starts = [w.window_start for w in windows]
    assert starts == [date(2025, 1, 1), date(2025, 4, 1),
                      date(2025, 7, 1), date(2025, 10, 1)]


def test_boundary_dates_split_between_tasks_one_and_two():
    entries = [
        entry("edge-in", event_date=date(2025, 3, 31)),
        entry("edge-out", event_date=date(2025, 4, 1)),
    ]
    windows = partition_timeline(entries, anchor_date=date(2025, 1, 1))
    buckets = assign_to_windows(entries, windows)
    assert [e.image_id for e in buckets[1]] == ["edge-in"]
    assert [e.image_id for e in buckets[2]] == ["edge-out"]


def test_window_count_derives_from_latest_entry():
    entries = [entry("late", event_date=date(2025, 11, 2))]
    windows = partition_timeline(entries, anchor_date=date(2025, 1, 1))
    assert len(windows) == 4


def test_single_month_of_data_leaves_later_rounds_empty(caplog):
    entries = [entry(f"e{i}", event_date=date(2025, 1, 5 + i)) for i in range(3)]
    windows = partition_timeline(entries, anchor_date=date(2025, 1, 1), num_windows=4)
    buckets = assign_to_windows(entries, windows)
    assert len(buckets[1]) == 3
    assert all(not buckets[t] for t in (2, 3, 4))


def test_pre_anchor_entries_land_in_round_zero():
    entries = [entry("old", event_date=date(2024, 6, 1)),
               entry("new", event_date=date(2025, 2, 1))]
    windows = partition_timeline(entries, anchor_date=date(2025, 1, 1))
    buckets = assign_to_windows(entries, windows)
    assert [e.image_id for e in buckets[0]] == ["old"]
    assert [e.image_id for e in buckets[1]] == ["new"]


def test_undated_entries_are_an_error():
    class Undated:
        image_id = "ghost"
        event_date = None

    with pytest.raises(UndatedEntryError) as excinfo:
        partition_timeline([Undated()], anchor_date=date(2025, 1, 1))
    assert "ghost" in str(excinfo.value)


# -- replay -------------------------------------------------------------------

def _pool(n_real, n_fake):
    reals = [entry(f"real-{i:03d}", label=0, origin="real_pool") for i in range(n_real)]
    fakes = [entry(f"fake-{i:03d}", label=1) for i in range(n_fake)]
    return reals + fakes


def test_replay_sizes_follow_the_floor_law():
    assert len(sample_replay(_pool(100, 100), 0.05, seed=1, round_t=2).entries) == 10
    assert len(sample_replay(_pool(100, 100), 0.0, seed=1, round_t=2).entries) == 0
    assert len(sample_replay(_pool(4, 3), 0.05, seed=1, round_t=2).entries) == 0


def test_replay_stratification_is_proportional():
    buf = sample_replay(_pool(150, 50), 0.10, seed=3, round_t=2)
    labels = [e.label for e in buf.entries]
    assert len(labels) == 20
    assert labels.count(0) == 15 and labels.count(1) == 5
    assert all(e.origin == "replay" for e in buf.entries)
    assert all(e.source_origin in ("itw", "real_pool") for e in buf.entries)


def test_replay_remainder_goes_to_larger_stratum():
    # total = floor(.05 * 70) = 3; quotas floor to 2 + 1 with no remainder,
    # so force one: 50 real / 20 fake -> exact 2.5 / 1.0 -> floors 2/1, rem 0
    # use 45/25: total 3, floors 1.928->1, 1.07->1, rem 1 -> reals get it
    buf = sample_replay(_pool(45, 25), 0.05, seed=3, round_t=2)
    labels = [e.label for e in buf.entries]
    assert len(labels) == 3
    assert labels.count(0) == 2 and labels.count(1) == 1


def test_replay_is_seeded_and_reproducible():
    pool = _pool(60, 40)
    a = sample_replay(pool, 0.1, seed=11, round_t=3)
    b = sample_replay(list(reversed(pool)), 0.1, seed=11, round_t=3)
    c = sample_replay(pool, 0.1, seed=12, round_t=3)
    assert a.entries == b.entries  # input order must not matter
    assert a.entries != c.entries
    ids = [e.image_id for e in a.entries]
    assert len(set(ids)) == len(ids)


def test_replay_unstratified_flag():
    buf = sample_replay(_pool(100, 0), 0.07, seed=5, round_t=2, stratified=False)
    assert len(buf.entries) == 7


def test_replay_rejects_bad_rho_and_duplicate_pool():
    with pytest.raises(ValidationError):
        sample_replay(_pool(10, 0), 1.5, seed=0, round_t=1)
    with pytest.raises(ValidationError):
        sample_replay([entry("same"), entry("same")], 0.5, seed=0, round_t=1)


# -- assembly -----------------------------------------------------------------

def test_disjoint_components_union():
    itw = _manifest([entry(f"itw-{i:02d}") for i in range(10)], "itw")
    gen = _manifest(
        [entry(f"gen-{i:02d}", origin="gen") for i in range(20)], "gen"
    )
    replay = _manifest(
        [entry(f"old-{i:02d}", round_introduced=1).as_replay() for i in range(5)],
        "replay",
    )
    out = assemble_round(itw, gen, replay, t=2, seed=0, created_at=date(2026, 1, 15))
    assert len(out.entries) == 35
    assert out.round == 2
    new = [e for e in out.entries if e.origin != "replay"]
    assert all(e.round_introduced == 2 for e in new)
    replays = [e for e in out.entries if e.origin == "replay"]
    assert all(e.round_introduced == 1 for e in replays)


def test_duplicate_hash_counted_once_with_merged_provenance():
    shared = entry("dup-id", provenance=("article:a1",))
    itw = _manifest([shared], "itw")
    replay = _manifest([entry("dup-id", round_introduced=1,
                              provenance=("article:a0",)).as_replay()], "replay")
    out = assemble_round(itw, None, replay, t=2, seed=0, created_at=date(2026, 1, 15))
    assert len(out.entries) == 1
    merged = out.entries[0]
    assert "article:a0" in merged.provenance and "article:a1" in merged.provenance
    assert merged.origin == "itw"  # fresh data wins over the replay copy


def test_generator_only_round_is_valid():
    gen = _manifest([entry("g-1", origin="gen")], "gen")
    out = assemble_round(None, gen, None, t=1, seed=0, created_at=date(2026, 1, 15))
    assert [e.image_id for e in out.entries] == ["g-1"]


def test_label_conflict_is_a_hard_stop():
    itw = _manifest([entry("clash", label=1)], "itw")
    replay = _manifest([entry("clash", label=0, origin="real_pool",
                              round_introduced=1).as_replay()], "replay")
    with pytest.raises(LabelConflictError):
        assemble_round(itw, None, replay, t=2, seed=0, created_at=date(2026, 1, 15))


def test_assembly_is_order_independent():
    a = _manifest([entry("a")], "a")
    b = _manifest([entry("b", origin="gen")], "b")
    c = _manifest([entry("c", round_introduced=1).as_replay()], "c")
    first = assemble_round(a, b, c, t=2, seed=0, created_at=date(2026, 1, 15))
    second = assemble_round(b, a, c, t=2, seed=0, created_at=date(2026, 1, 15))
    assert first.entries == second.entries


def test_test_split_leakage_is_a_hard_stop():
    itw = _manifest([entry("leaked-test-id")], "itw")
    with pytest.raises(SplitLeakageError):
        assemble_round(itw, None, None, t=1, seed=0, created_at=date(2026, 1, 15),
                       reserved_test_ids={"leaked-test-id"})


def test_accumulated_pool_dedups_across_rounds():
    m1 = _manifest([entry("x"), entry("y")], "r1", round_=1)
    m2 = _manifest([entry("y"), entry("z")], "r2", round_=2)
    pool = accumulated_pool([m2, m1])
    assert [e.image_id for e in pool] == ["x", "y", "z"]


# -- portion subsampling --------------------------------------------------------

def test_portion_one_is_identity():
    m = _manifest(_pool(30, 10), "m")
    out = subsample_portion(m, 1.0, seed=4)
    assert out.entries == m.entries


def test_portion_stratified_floors():
    m = _manifest(_pool(50, 50), "m")
    out = subsample_portion(m, 0.10, seed=4)
    labels = [e.label for e in out.entries]
    assert labels.count(0) == 5 and labels.count(1) == 5


def test_portion_thirty_ten_split():
    m = _manifest(_pool(30, 10), "m")
    out = subsample_portion(m, 0.5, seed=4)
    labels = [e.label for e in out.entries]
    assert labels.count(0) == 15 and labels.count(1) == 5


def test_portion_largest_remainder_distribution():
    # 7 real / 3 fake at 0.45: target floor(4.5)=4; floors 3.15->3, 1.35->1
    # no remainder; at 0.55: target 5; floors 3.85->3, 1.65->1; remainder 1
    # goes to the stratum with fraction .85
    m = _manifest(_pool(7, 3), "m")
    out = subsample_portion(m, 0.55, seed=4)
    labels = [e.label for e in out.entries]
    assert len(labels) == 5
    assert labels.count(0) == 4 and labels.count(1) == 1


def test_portion_is_seeded():
    m = _manifest(_pool(40, 40), "m")
    a = subsample_portion(m, 0.5, seed=1)
    b = subsample_portion(m, 0.5, seed=1)
    c = subsample_portion(m, 0.5, seed=2)
    assert a.entries == b.entries
    assert a.entries != c.entries


# -- job emission ----------------------------------------------------------------

def _round_record(t, manifest):
    return UpdateRound(
        t=t, window_start=date(2025, 1, 1), window_end=date(2025, 3, 31),
        assembled_manifest=manifest.manifest_id, seed=0,
    )


def test_emitted_job_carries_the_manifest_hash(tmp_path):
    from wildharvest.manifest import manifest_hash

    m = _manifest([entry("a")], "round-001")
    trainer = TrainerBackend(backend_name="t", endpoint="mock:",
                             ledger_path=str(tmp_path / "trainer.jsonl"))
    job = emit_training_job(_round_record(1, m), m, trainer,
                            {"epochs": 1}, jobs_path=tmp_path / "jobs.jsonl")
    assert job.manifest_hash == manifest_hash(m)
    recorded = json.loads((tmp_path / "trainer.jsonl").read_text())
    assert recorded["manifest_hash"] == job.manifest_hash
    assert recorded["hyperparameters"] == {"epochs": 1}


def test_double_emission_gets_new_monotone_id(tmp_path, caplog):
    m = _manifest([entry("a")], "round-002", round_=2)
    trainer = TrainerBackend(backend_name="t", endpoint="mock:",
                             ledger_path=str(tmp_path / "trainer.jsonl"))
    first = emit_training_job(_round_record(2, m), m, trainer, {},
                              jobs_path=tmp_path / "jobs.jsonl")
    second = emit_training_job(_round_record(2, m), m, trainer, {},
                               jobs_path=tmp_path / "jobs.jsonl")
    assert first.job_id == "job-t2-000"
    assert second.job_id == "job-t2-001"
    assert any("already has an emitted job" in r.message for r in caplog.records)


def test_rejecting_backend_surfaces_job_rejected(tmp_path):
    m = _manifest([entry("a")], "round-001")
    trainer = TrainerBackend(backend_name="t", endpoint="mock:reject")
    with pytest.raises(JobRejected):
        emit_training_job(_round_record(1, m), m, trainer, {},
                          jobs_path=tmp_path / "jobs.jsonl")
    assert not (tmp_path / "jobs.jsonl").exists()  # round state unchanged


def test_emit_validates_manifest_identity(tmp_path):
    m = _manifest([entry("a")], "round-001")
    other = _manifest([entry("a")], "round-999")
    trainer = TrainerBackend(backend_name="t", endpoint="mock:")
    with pytest.raises(ValidationError):
        emit_training_job(_round_record(1, m), other, trainer, {})


# -- generator registry ------------------------------------------------------------

def test_registry_keeps_explicit_splits_verbatim():
    registry = register_generators(TABLE_REGISTRY)
    by_name = {r.name: r for r in registry.rows}
    assert (by_name["SDXL"].train_count, by_name["SDXL"].test_count) == (274, 31)
    assert (by_name["Midjourney v7"].train_count, by_name["Midjourney v7"].test_count) == (270, 31)
    assert (by_name["Firefly Img 5"].train_count, by_name["Firefly Img 5"].test_count) == (133, 17)
    assert (by_name["FLUX.2 [dev]"].train_count, by_name["FLUX.2 [dev]"].test_count) == (182, 23)


def test_registry_default_split_rule():
    registry = registry_from_dict(
        {"generators": [{"name": "new-gen", "release_date": "2026-01", "size": 200}]}
    )
    row = registry.rows[0]
    assert (row.train_count, row.test_count) == (180, 20)
    tiny = registry_from_dict(
        {"generators": [{"name": "tiny", "release_date": "2026-01", "size": 4}]}
    ).rows[0]
    assert tiny.test_count == 1  # max(1, ...) floor


def test_registry_rejects_non_summing_splits():
    with pytest.raises(RegistryError):
        registry_from_dict(
            {"generators": [{"name": "bad", "release_date": "2025-11",
                             "size": 305, "train": 275, "test": 31}]}
        )


def test_registry_membership_is_seeded_and_disjoint():
    ids = [f"img-{i:03d}" for i in range(30)]
    payload = {"generators": [{"name": "g", "release_date": "2025-05",
                               "size": 30, "image_ids": ids}]}
    a = registry_from_dict(payload, seed=1).rows[0]
    b = registry_from_dict(payload, seed=1).rows[0]
    c = registry_from_dict(payload, seed=2).rows[0]
    assert a.test_ids == b.test_ids
    assert a.test_ids != c.test_ids
    assert len(a.test_ids) == 3  # round(0.1 * 30)
    assert set(a.test_ids).isdisjoint(a.train_ids)
    assert len(a.train_ids) + len(a.test_ids) == 30


def test_registry_id_count_must_match_size():
    with pytest.raises(RegistryError):
        registry_from_dict(
            {"generators": [{"name": "g", "release_date": "2025-05",
                             "size": 3, "image_ids": ["a", "b"]}]}
        )


def test_gen_entries_only_for_rows_inside_the_window():
    ids = [f"img-{i}" for i in range(10)]
    registry = registry_from_dict(
        {"generators": [
            {"name": "inside", "release_date": "2025-02", "size": 10, "image_ids": ids},
            {"name": "outside", "release_date": "2025-07", "size": 10, "image_ids": ids},
        ]}
    )
    window = UpdateRound(t=1, window_start=date(2025, 1, 1), window_end=date(2025, 3, 31))
    entries = gen_entries_for_window(registry, window)
    assert entries and all(e.generator_name == "inside" for e in entries)
    assert all(e.label == 1 and e.origin == "gen" for e in entries)
    inside = registry.row("inside")
    assert {e.image_id for e in entries} == set(inside.train_ids)
