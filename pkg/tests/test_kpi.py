import json

import numpy as np
import pytest

from oran_pcl.errors import ConfigError, ContractError, IngestionError
from oran_pcl.kpi import (
    DEFAULT_MAPPING,
    VES_KEYS,
    Collector,
    SliceMapping,
    VesEvent,
    aggregate_cubes,
    dataset_to_events,
    ingest_ves_event,
    per_bearer_prb_share,
    samples_to_dataset,
    tag_and_aggregate,
)
from oran_pcl.traffic import QCIS, BearerClass, CellId, GeneratorConfig, KpiSample, generate_synthetic_dataset


def _event(**overrides):
    fields = {k: 0.0 for k in VES_KEYS}
    fields.update(overrides)
    return VesEvent("enb0-cell1", 7, fields)


def test_ves_json_shape_is_exact():
    doc = _event().to_json()
    assert set(doc) == {"event"}
    assert set(doc["event"]) == {"commonEventHeader", "measurementFields"}
    assert doc["event"]["commonEventHeader"] == {"sourceName": "enb0-cell1", "startEpochHour": 7}
    assert list(doc["event"]["measurementFields"]) == list(VES_KEYS)
    assert VesEvent.from_json(json.loads(json.dumps(doc))) == _event()


def test_all_zero_event_gives_four_zero_samples():
    rows = ingest_ves_event(_event())
    assert [r.qci for r in rows] == list(QCIS)
    assert all(r.active_ues == 0 and r.volume_gb == 0 and r.dl_prb_util_pct == 0 for r in rows)
    assert rows[0].cell == CellId(0, 1)


def test_missing_key_is_an_ingestion_error_carrying_the_event():
    ev = _event()
    fields = dict(ev.measurement_fields)
    del fields["volume_gb_qci5"]
    bad = VesEvent(ev.source_name, ev.start_epoch_hour, fields)
    with pytest.raises(IngestionError) as info:
        ingest_ves_event(bad)
    assert info.value.event is bad


@pytest.mark.parametrize(
    "event",
    [
        VesEvent("cell-7", 0, {k: 0.0 for k in VES_KEYS}),
        _event(dl_prb_util_pct=120.0),
        _event(active_ues_qci1=-1.0),
        _event(volume_gb_qci9="lots"),
        _event(volume_gb_qci9=float("nan")),
    ],
)
def test_invalid_events_rejected(event):
    with pytest.raises(IngestionError):
        ingest_ves_event(event)


def test_collector_dead_letters_and_keeps_going():
    c = Collector()
    assert not c.ingest_line("{not json")
    assert not c.ingest_line(json.dumps({"event": {}}))
    assert c.ingest(_event(active_ues_qci1=2.0))
    assert len(c.dead_letters) == 2
    assert len(c.samples()) == 4


def test_dataset_events_ingest_round_trip():
    ds = generate_synthetic_dataset(GeneratorConfig(n_enb=1, cells_per_enb=1, days=2, seed=4))
    c = Collector()
    for ev in dataset_to_events(ds):
        assert c.ingest_line(json.dumps(ev.to_json()))
    assert c.samples() == list(ds.samples())
    assert c.to_dataset() == ds


def test_samples_to_dataset_requires_full_coverage():
    rows = ingest_ves_event(_event())[:3]
    with pytest.raises(ContractError):
        samples_to_dataset(rows)
    with pytest.raises(ContractError):
        samples_to_dataset([])


def _samples(prb, volumes, ues=(1, 1, 1, 1)):
    cell = CellId(0, 0)
    return [KpiSample(0, cell, q, u, v, prb) for q, u, v in zip(QCIS, ues, volumes)]


def test_prb_share_volume_weighted():
    shares = per_bearer_prb_share(_samples(50.0, [1, 0, 0, 3]))
    assert shares == {BearerClass.QCI1: 12.5, BearerClass.QCI2: 0.0, BearerClass.QCI5: 0.0, BearerClass.QCI9: 37.5}


def test_prb_share_uniform_at_zero_volume():
    shares = per_bearer_prb_share(_samples(40.0, [0, 0, 0, 0]))
    assert set(shares.values()) == {10.0}


def test_prb_share_contracts():
    s = _samples(40.0, [1, 2, 3, 4])
    with pytest.raises(ContractError):
        per_bearer_prb_share(s[:3])
    with pytest.raises(ContractError):
        per_bearer_prb_share([s[0], s[0], s[1], s[2]])
    moved = KpiSample(1, s[3].cell, s[3].qci, 1, 1, 40.0)
    with pytest.raises(ContractError):
        per_bearer_prb_share(s[:3] + [moved])


def test_mapping_validation():
    with pytest.raises(ConfigError):
        SliceMapping.from_qcis({"A": [1, 2], "B": [2, 5, 9]})
    with pytest.raises(ConfigError):
        SliceMapping.from_qcis({"A": [1, 2, 5]})
    with pytest.raises(ConfigError):
        SliceMapping.from_qcis({"A": [1, 2, 5, 9], "B": []})
    assert DEFAULT_MAPPING.slices["A"] == {BearerClass.QCI1, BearerClass.QCI9}


def test_single_slice_equals_cell_totals(small_dataset):
    whole = SliceMapping.from_qcis({"all": [1, 2, 5, 9]})
    series = tag_and_aggregate(small_dataset, whole)
    assert len(series) == len(small_dataset.cells)
    for c, s in enumerate(series):
        np.testing.assert_allclose(s.active_ues, small_dataset.active_ues[:, c].sum(axis=1))
        np.testing.assert_allclose(s.prb_share_pct, small_dataset.dl_prb_util_pct[:, c], atol=1e-9)
        np.testing.assert_array_equal(s.hour, np.arange(small_dataset.hours))


def test_prb_share_conserved_across_slices(small_dataset):
    cubes = aggregate_cubes(small_dataset)
    np.testing.assert_allclose(cubes.prb_share_pct.sum(axis=0), small_dataset.dl_prb_util_pct, atol=1e-9)


def test_singletons_sum_to_pair(small_dataset):
    fine = aggregate_cubes(small_dataset, SliceMapping.from_qcis({"1": [1], "9": [9], "B": [2, 5]}))
    assert fine.slice_ids == ["1", "9", "B"]
    coarse = aggregate_cubes(small_dataset, DEFAULT_MAPPING)
    for name in ("active_ues", "volume_gb", "prb_share_pct"):
        a = fine.channel(name)
        np.testing.assert_allclose(a[0] + a[1], coarse.channel(name)[0], atol=1e-12)


def test_zero_noise_slice_series_are_periodic(periodic_dataset):
    for s in tag_and_aggregate(periodic_dataset):
        np.testing.assert_allclose(s.active_ues[24:], s.active_ues[:-24], rtol=0, atol=1e-12)
        np.testing.assert_allclose(s.prb_share_pct[24:], s.prb_share_pct[:-24], rtol=0, atol=1e-12)


def test_ue_allocator_is_swappable(small_dataset):
    by_ue = aggregate_cubes(small_dataset, allocator="ue")
    np.testing.assert_allclose(by_ue.prb_share_pct.sum(axis=0), small_dataset.dl_prb_util_pct, atol=1e-9)
    with pytest.raises(ConfigError):
        aggregate_cubes(small_dataset, allocator="bogus")
