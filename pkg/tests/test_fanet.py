#!/usr/bin/env python3
"""
Command-line tests: every subcommand on a small seeded scenario
"""

import json
import os

import pytest

import fanet

GOLDEN = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'golden')


def _lines(path):
    with open(path, encoding='utf-8') as handle:
        return [json.loads(line) for line in handle if line.strip()]


def _read_bytes(path):
    with open(path, 'rb') as handle:
        return handle.read()


@pytest.fixture
def scenario_dir(tmp_path):
    out = tmp_path / 'scenario'
    code = fanet.main(['synth', '--seed', '7', '--out-dir', str(out), '--tracks', '4', '--frames', '20',
                       '--p-miss', '0.1', '--fp-rate', '1', '--duplicates', '1', '-q'])
    assert code == 0
    return out


def test_synth_writes_all_files(scenario_dir):
    for name in ('detections.jsonl', 'tubelets.jsonl', 'ground_truth.jsonl', 'scenario.json'):
        assert (scenario_dir / name).is_file()
    meta = json.loads((scenario_dir / 'scenario.json').read_text(encoding='utf-8'))
    assert meta['seed'] == 7
    assert meta['tubelet_length'] == 6
    assert meta['num_frames'] == 20


def test_synth_is_byte_identical(tmp_path, scenario_dir):
    again = tmp_path / 'again'
    assert fanet.main(['synth', '--seed', '7', '--out-dir', str(again), '--tracks', '4', '--frames', '20',
                       '--p-miss', '0.1', '--fp-rate', '1', '--duplicates', '1', '-q']) == 0
    for name in ('detections.jsonl', 'tubelets.jsonl', 'ground_truth.jsonl', 'scenario.json'):
        assert _read_bytes(scenario_dir / name) == _read_bytes(again / name)


def _pipeline_args(scenario_dir, out_dir):
    return ['pipeline', '-q',
            '--detections', str(scenario_dir / 'detections.jsonl'),
            '--tubelets', str(scenario_dir / 'tubelets.jsonl'),
            '--gt', str(scenario_dir / 'ground_truth.jsonl'),
            '--out-dir', str(out_dir)]


def test_pipeline_runs_are_byte_identical(tmp_path, scenario_dir):
    first, second = tmp_path / 'first', tmp_path / 'second'
    assert fanet.main(_pipeline_args(scenario_dir, first)) == 0
    assert fanet.main(_pipeline_args(scenario_dir, second)) == 0
    for name in ('detections.jsonl', 'tubes.jsonl', 'metrics.json'):
        assert _read_bytes(first / name) == _read_bytes(second / name)

    metrics = json.loads((first / 'metrics.json').read_text(encoding='utf-8'))
    assert 0.0 <= metrics['mAP@0.50'] <= 1.0
    tubes = _lines(first / 'tubes.jsonl')
    detections = _lines(first / 'detections.jsonl')
    assert sum(len(t['frames']) for t in tubes) == len(detections)


def test_pipeline_prints_the_evaluation_table(tmp_path, scenario_dir, capsys):
    assert fanet.main(_pipeline_args(scenario_dir, tmp_path / 'out')) == 0
    out = capsys.readouterr().out
    assert "=" * 60 in out
    assert 'mAP@0.50' in out


def test_bad_config_exits_with_2(tmp_path, scenario_dir):
    config = tmp_path / 'bad.env'
    config.write_text('FANET_BETA=abc\n', encoding='utf-8')
    args = _pipeline_args(scenario_dir, tmp_path / 'out') + ['--config', str(config)]
    assert fanet.main(args) == 2


def test_bad_flag_value_exits_with_2(tmp_path, scenario_dir):
    args = _pipeline_args(scenario_dir, tmp_path / 'out') + ['--alpha', '1.5']
    assert fanet.main(args) == 2


def test_malformed_input_exits_with_3(tmp_path, scenario_dir):
    broken = tmp_path / 'broken.jsonl'
    broken.write_text('{"video": "v", "frame": 0, "class": 0, "score": 0.5, "bbox": [0, 0, 1, 1]}\n{oops\n',
                      encoding='utf-8')
    args = ['pipeline', '-q', '--detections', str(broken), '--out-dir', str(tmp_path / 'out')]
    assert fanet.main(args) == 3
    assert not (tmp_path / 'out').exists()


def test_missing_input_exits_with_3(tmp_path):
    args = ['eval', '-q', '--detections', str(tmp_path / 'nope.jsonl'), '--gt', str(tmp_path / 'gt.jsonl')]
    assert fanet.main(args) == 3


def test_eval_writes_csv_and_metrics(tmp_path, scenario_dir):
    csv_path = tmp_path / 'table.csv'
    metrics_path = tmp_path / 'metrics.json'
    assert fanet.main(['eval', '-q', '--detections', str(scenario_dir / 'detections.jsonl'),
                       '--gt', str(scenario_dir / 'ground_truth.jsonl'), '--coco',
                       '--csv', str(csv_path), '--metrics', str(metrics_path)]) == 0
    header = csv_path.read_text(encoding='utf-8').splitlines()[0]
    assert 'AP@0.50' in header and 'AP@0.95' in header
    metrics = json.loads(metrics_path.read_text(encoding='utf-8'))
    assert 0.0 <= metrics['mAP@[.50:.95]'] <= 1.0


def test_tnms_drops_duplicate_tubelets(tmp_path, scenario_dir):
    out = tmp_path / 'kept.jsonl'
    assert fanet.main(['tnms', '-q', '--tubelets', str(scenario_dir / 'tubelets.jsonl'),
                       '--out', str(out)]) == 0
    before = _lines(scenario_dir / 'tubelets.jsonl')
    after = _lines(out)
    assert 0 < len(after) < len(before)
    assert {r['id'] for r in after} <= {r['id'] for r in before}


def test_link_skips_suppression(tmp_path, scenario_dir):
    out = tmp_path / 'linked'
    assert fanet.main(['link', '-q', '--detections', str(scenario_dir / 'detections.jsonl'),
                       '--tubelets', str(scenario_dir / 'tubelets.jsonl'), '--out-dir', str(out)]) == 0
    linked = _lines(out / 'detections.jsonl')
    raw = _lines(scenario_dir / 'detections.jsonl')
    assert len(linked) == sum(1 for r in raw if r['score'] >= 0.05)
    assert not os.path.exists(out / 'metrics.json')


def test_pool_records(tmp_path):
    out = tmp_path / 'pooled.jsonl'
    assert fanet.main(['pool', '-q', '--seed', '3', '--n', '3', '--channels', '8', '--limit', '2',
                       '--out', str(out)]) == 0
    records = _lines(out)
    assert len(records) == 2
    for record in records:
        assert len(record['levels']) == 3
        assert all(2 <= level <= 5 for level in record['levels'])
        assert record['shape'] == [7, 7, 8]
        assert 0.0 <= record['mean'] <= record['max'] <= 1.0


def test_pipeline_matches_golden_files(tmp_path):
    out = tmp_path / 'out'
    assert fanet.main(['pipeline', '-q', '--n', '3',
                       '--detections', os.path.join(GOLDEN, 'pipeline_detections.jsonl'),
                       '--tubelets', os.path.join(GOLDEN, 'tubelets.jsonl'),
                       '--out-dir', str(out)]) == 0
    assert _read_bytes(out / 'detections.jsonl') == \
        _read_bytes(os.path.join(GOLDEN, 'pipeline_expected_detections.jsonl'))
    assert _read_bytes(out / 'tubes.jsonl') == \
        _read_bytes(os.path.join(GOLDEN, 'pipeline_expected_tubes.jsonl'))


def test_tnms_matches_golden_file(tmp_path):
    out = tmp_path / 'kept.jsonl'
    assert fanet.main(['tnms', '-q', '--n', '3', '--tubelets', os.path.join(GOLDEN, 'tubelets.jsonl'),
                       '--out', str(out)]) == 0
    assert _read_bytes(out) == _read_bytes(os.path.join(GOLDEN, 'tnms_expected.jsonl'))


def test_invalid_utf8_exits_with_3(tmp_path, capsys):
    broken = tmp_path / 'broken.jsonl'
    broken.write_bytes(b'{"video": "v", "frame": 0, "class": 0, "score": 0.5, "bbox": [0, 0, 1, 1]}\n'
                       b'{"video": "\xff\xfe"}\n')
    args = ['pipeline', '--detections', str(broken), '--out-dir', str(tmp_path / 'out')]
    assert fanet.main(args) == 3
    assert f"{broken}:2:" in capsys.readouterr().out


def test_no_cascade_help_names_the_first_stage(capsys):
    with pytest.raises(SystemExit):
        fanet.main(['pipeline', '--help'])
    assert 'first spatial stage score only' in capsys.readouterr().out
