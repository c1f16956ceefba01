"""Static phase: load a program and its targets, build the target tuple and distance maps.

Results are cached beside the program file, keyed by a hash of everything that
influences them, so repeated campaigns skip the graph work.
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

from .distance import DEFAULT_C, DistanceMap, compute_distances
from .errors import EmptyTupleWarning
from .program import MicroProgram, load_program
from .targets import EMPTY_CC_MESSAGE, TargetSpec, TargetTuple, build_target_tuple, load_target_spec

CACHE_DIR = ".crossdgf-cache"
CACHE_VERSION = 1


@dataclass
class Analysis:
    program: MicroProgram
    spec: TargetSpec
    tt: TargetTuple
    dist: DistanceMap
    seconds: float
    cached: bool = False
    program_sha: str = ""
    targets_sha: str = ""


def dump_json(doc) -> str:
    """Canonical text form used for every artifact: sorted keys, stable indent."""
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def cache_key(program_text: str, targets_text: str, c: float, strict_harmonic: bool) -> str:
    h = hashlib.sha256()
    for part in (str(CACHE_VERSION), program_text, targets_text, repr(float(c)), str(bool(strict_harmonic))):
        h.update(part.encode())
        h.update(b"\0")
    return h.hexdigest()[:24]


def analyze_texts(program_text: str, targets_text: str, c: float = DEFAULT_C,
                  strict_harmonic: bool = False, warn: bool = True) -> Analysis:
    t0 = time.perf_counter()
    program = load_program(program_text)
    spec = load_target_spec(targets_text)
    tt = build_target_tuple(program, spec, warn=warn)
    dist = compute_distances(program, tt, c, strict_harmonic)
    return Analysis(program, spec, tt, dist, time.perf_counter() - t0,
                    program_sha=_sha(program_text), targets_sha=_sha(targets_text))


def analyze_files(program_path, targets_path, c: float = DEFAULT_C, strict_harmonic: bool = False,
                  use_cache: bool = True, warn: bool = True) -> Analysis:
    program_path, targets_path = Path(program_path), Path(targets_path)
    program_text = program_path.read_text()
    targets_text = targets_path.read_text()
    if not use_cache:
        return analyze_texts(program_text, targets_text, c, strict_harmonic, warn)

    cache_file = program_path.parent / CACHE_DIR / f"{cache_key(program_text, targets_text, c, strict_harmonic)}.json"
    if cache_file.exists():
        t0 = time.perf_counter()
        try:
            doc = json.loads(cache_file.read_text())
            program = load_program(program_text)
            spec = load_target_spec(targets_text)
            tt = TargetTuple.from_json(doc["tuple"], program)
            dist = DistanceMap.from_json(doc["distances"], program)
        except (OSError, ValueError, KeyError):
            pass  # unreadable cache entry: recompute below
        else:
            if warn and not tt.CC:
                warnings.warn(EMPTY_CC_MESSAGE, EmptyTupleWarning, stacklevel=2)
            return Analysis(program, spec, tt, dist, time.perf_counter() - t0, cached=True,
                            program_sha=_sha(program_text), targets_sha=_sha(targets_text))

    result = analyze_texts(program_text, targets_text, c, strict_harmonic, warn)
    try:
        cache_file.parent.mkdir(exist_ok=True)
        cache_file.write_text(dump_json({"tuple": result.tt.to_json(), "distances": result.dist.to_json()}))
    except OSError:
        pass  # read-only location: caching is best effort
    return result
