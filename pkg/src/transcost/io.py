"""Reading and writing cohort files.

Directory layout (all CSV files have a header row)::

    states.json    {"labels": [...], "absorbing": [...]}
    subjects.csv   subject_id, initial_state[, censor_time][, covariate columns...]
    events.csv     subject_id, time, from_state, to_state, cost
    accrual.csv    subject_id, time, increment          (optional lump costs)
    rates.csv      subject_id, start, end, rate         (optional accrual pieces)
    panel.csv      subject_id, interval_start, interval_end, cost, observed
                                                        (optional; observed is 0, 1 or partial)
    cost-records.csv  subject_id, seq, t_end, cost, observed, design columns...
                                                        (optional; direct regression input)

An empty ``censor_time`` means the subject is uncensored.  A missing
``censor_time`` column marks every subject uncensored and is noted in the
validation report.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .cost_estimators import NOT_AT_RISK, OBSERVED, PARTIAL, CostTable, PanelSet
from .errors import InvariantViolation, SchemaError
from .event_history import StateSpace, build_event_history
from .regression import CostRegressionData

SUBJECT_COLUMNS = ("subject_id", "initial_state")
EVENT_COLUMNS = ("subject_id", "time", "from_state", "to_state", "cost")
ACCRUAL_COLUMNS = ("subject_id", "time", "increment")
RATE_COLUMNS = ("subject_id", "start", "end", "rate")
PANEL_COLUMNS = ("subject_id", "interval_start", "interval_end", "cost", "observed")
RECORD_COLUMNS = ("subject_id", "seq", "t_end", "cost", "observed")


@dataclass
class Bundle:
    """Validated dataset: histories, cost table, optional panels and a report."""

    state_space: StateSpace
    horizon: float
    histories: list
    costs: CostTable
    panels: PanelSet | None = None
    report: dict = field(default_factory=dict)

    @property
    def event_times(self):
        return np.array([h.absorption_time for h in self.histories])

    @property
    def censor_times(self):
        return np.array([h.censor_time for h in self.histories])


def _read_csv(path, required):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{os.path.basename(path)}: missing columns {missing}",
                              file=str(path), line=1)
        rows = [(k + 2, row) for k, row in enumerate(reader)]
    return header, rows


def _number(path, line, row, col, kind=float, allow_empty=False, nonneg=False):
    raw = (row.get(col) or "").strip()
    if raw == "":
        if allow_empty:
            return None
        raise SchemaError(f"{os.path.basename(path)} line {line}: empty {col}",
                          file=str(path), line=line, column=col)
    try:
        val = kind(raw) if kind is not int else int(float(raw))
    except ValueError:
        raise SchemaError(f"{os.path.basename(path)} line {line}: {col}={raw!r} is not a number",
                          file=str(path), line=line, column=col) from None
    if kind is float and math.isnan(val):
        raise SchemaError(f"{os.path.basename(path)} line {line}: {col} is NaN",
                          file=str(path), line=line, column=col)
    if nonneg and val < 0:
        raise SchemaError(f"{os.path.basename(path)} line {line}: negative {col} ({raw})",
                          file=str(path), line=line, column=col)
    return val


def read_states(path):
    with open(path) as fh:
        d = json.load(fh)
    try:
        return StateSpace(list(d["labels"]), set(int(a) for a in d["absorbing"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise SchemaError(f"{os.path.basename(path)}: {exc}", file=str(path)) from None


def ingest(directory, horizon, panel_grid=None):
    """Read and validate a cohort directory.

    Parameters
    ----------
    directory : str
        Folder with the files listed in the module docstring.
    horizon : float
        Horizon ``tau``.
    panel_grid : sequence, optional
        Expected interval grid for ``panel.csv``.

    Returns
    -------
    Bundle
    """
    p = lambda name: os.path.join(directory, name)  # noqa: E731
    ss = read_states(p("states.json"))
    notes = []
    header, srows = _read_csv(p("subjects.csv"), SUBJECT_COLUMNS)
    has_censor = "censor_time" in header
    if not has_censor:
        notes.append("subjects.csv has no censor_time column; all subjects treated as uncensored")
    cov_names = [c for c in header if c not in ("subject_id", "initial_state", "censor_time")]
    subjects = {}
    order = []
    for line, row in srows:
        sid = (row["subject_id"] or "").strip()
        if sid == "" or sid in subjects:
            raise SchemaError(f"subjects.csv line {line}: missing or duplicate subject_id {sid!r}",
                              file=p("subjects.csv"), line=line)
        init = _number(p("subjects.csv"), line, row, "initial_state", int, nonneg=True)
        cens = _number(p("subjects.csv"), line, row, "censor_time", allow_empty=True, nonneg=True) \
            if has_censor else None
        cov = {c: _number(p("subjects.csv"), line, row, c) for c in cov_names}
        subjects[sid] = (init, math.inf if cens is None else cens, cov, line)
        order.append(sid)
    index = {sid: k for k, sid in enumerate(order)}

    def subject_of(path, line, row):
        sid = (row["subject_id"] or "").strip()
        if sid not in index:
            raise SchemaError(f"{os.path.basename(path)} line {line}: unknown subject_id {sid!r}",
                              file=str(path), line=line)
        return index[sid]

    _, erows = _read_csv(p("events.csv"), EVENT_COLUMNS)
    events = {sid: [] for sid in order}
    for line, row in erows:
        k = subject_of(p("events.csv"), line, row)
        t = _number(p("events.csv"), line, row, "time", nonneg=True)
        h = _number(p("events.csv"), line, row, "from_state", int, nonneg=True)
        j = _number(p("events.csv"), line, row, "to_state", int, nonneg=True)
        c = _number(p("events.csv"), line, row, "cost", nonneg=True)
        if not math.isfinite(t):
            raise SchemaError(f"events.csv line {line}: time must be finite",
                              file=p("events.csv"), line=line)
        events[order[k]].append((t, h, j, c, line))

    histories = []
    for sid in order:
        init, cens, cov, line = subjects[sid]
        rows = sorted(events[sid], key=lambda e: e[4])
        try:
            histories.append(build_event_history([r[:4] for r in rows], ss, horizon,
                                                 subject_id=sid, initial_state=init,
                                                 censor_time=cens, covariates=cov))
        except InvariantViolation as exc:
            exc.context.setdefault("subject_id", sid)
            raise
        except ValueError as exc:
            raise SchemaError(f"subject {sid}: {exc}", subject_id=sid) from None

    ls, lt, lc = [], [], []
    for k, h in enumerate(histories):
        for ev in h.events:
            ls.append(k)
            lt.append(ev.time)
            lc.append(ev.cost)
    n_accrual = 0
    if os.path.exists(p("accrual.csv")):
        _, arows = _read_csv(p("accrual.csv"), ACCRUAL_COLUMNS)
        for line, row in arows:
            k = subject_of(p("accrual.csv"), line, row)
            t = _number(p("accrual.csv"), line, row, "time", nonneg=True)
            c = _number(p("accrual.csv"), line, row, "increment", nonneg=True)
            if t > histories[k].end_of_observation:
                raise SchemaError(f"accrual.csv line {line}: cost after the end of observation",
                                  file=p("accrual.csv"), line=line)
            ls.append(k)
            lt.append(t)
            lc.append(c)
            n_accrual += 1
    ps, pa, pb, pr = [], [], [], []
    if os.path.exists(p("rates.csv")):
        _, rrows = _read_csv(p("rates.csv"), RATE_COLUMNS)
        for line, row in rrows:
            k = subject_of(p("rates.csv"), line, row)
            a = _number(p("rates.csv"), line, row, "start", nonneg=True)
            b = _number(p("rates.csv"), line, row, "end", nonneg=True)
            v = _number(p("rates.csv"), line, row, "rate", nonneg=True)
            if b < a or b > histories[k].end_of_observation + 1e-12:
                raise SchemaError(f"rates.csv line {line}: piece [{a}, {b}) is outside the "
                                  "observation window", file=p("rates.csv"), line=line)
            ps.append(k)
            pa.append(a)
            pb.append(b)
            pr.append(v)
    costs = CostTable(len(order), ls, lt, lc, ps, pa, pb, pr, subject_ids=tuple(order))

    panels = None
    if os.path.exists(p("panel.csv")):
        panels = read_panels(p("panel.csv"), order, panel_grid)
    report = {"subjects": len(order), "events": len(erows), "accrual_rows": n_accrual,
              "rate_rows": len(ps), "panel_rows": 0 if panels is None else int(panels.increments.size),
              "rejected": [], "notes": notes, "covariates": cov_names}
    return Bundle(ss, float(horizon), histories, costs, panels, report)


def read_panels(path, order, grid=None):
    _, rows = _read_csv(path, PANEL_COLUMNS)
    index = {sid: k for k, sid in enumerate(order)}
    recs = []
    for line, row in rows:
        sid = (row["subject_id"] or "").strip()
        if sid not in index:
            raise SchemaError(f"panel.csv line {line}: unknown subject_id {sid!r}",
                              file=str(path), line=line)
        a = _number(path, line, row, "interval_start", nonneg=True)
        b = _number(path, line, row, "interval_end", nonneg=True)
        c = _number(path, line, row, "cost", nonneg=True)
        flag = (row["observed"] or "").strip().lower()
        code = {"0": NOT_AT_RISK, "1": OBSERVED, "partial": PARTIAL, "2": PARTIAL}.get(flag)
        if code is None:
            raise SchemaError(f"panel.csv line {line}: observed must be 0, 1 or partial",
                              file=str(path), line=line)
        recs.append((index[sid], a, b, c, code, line))
    starts = sorted({r[1] for r in recs})
    ends = sorted({r[2] for r in recs})
    g = np.array(starts + [ends[-1]]) if recs else np.asarray(grid, dtype=float)
    if grid is not None and (len(grid) != g.size or np.any(np.abs(np.asarray(grid) - g) > 1e-12)):
        raise SchemaError("panel.csv intervals do not match the requested grid", file=str(path))
    inc = np.zeros((len(order), g.size - 1))
    obs = np.zeros((len(order), g.size - 1), dtype=int)
    for k, a, b, c, code, line in recs:
        col = int(np.searchsorted(g, a))
        if col >= g.size - 1 or g[col] != a or g[col + 1] != b:
            raise SchemaError(f"panel.csv line {line}: interval ({a}, {b}] is not on the common grid",
                              file=str(path), line=line)
        inc[k, col] = c
        obs[k, col] = code
    return PanelSet(g, inc, obs, tuple(order))


def read_cost_records(path, order=None, strata=None):
    """Read ``cost-records.csv`` into :class:`CostRegressionData`.

    Every column after the five fixed ones is a design column.  Records are
    ordered by subject (``order`` when given, else first appearance) and
    ``seq``.  ``cost`` may be empty on unobserved records.  ``strata`` maps
    subject_id to a censoring stratum label.
    """
    header, rows = _read_csv(path, RECORD_COLUMNS)
    design = [c for c in header if c not in RECORD_COLUMNS]
    if not design:
        raise SchemaError("cost-records.csv: no design columns", file=str(path), line=1)
    index = {sid: k for k, sid in enumerate(order)} if order is not None else {}
    recs = []
    for line, row in rows:
        sid = (row["subject_id"] or "").strip()
        if sid not in index:
            if order is not None or sid == "":
                raise SchemaError(f"cost-records.csv line {line}: unknown subject_id {sid!r}",
                                  file=str(path), line=line)
            index[sid] = len(index)
        flag = _number(path, line, row, "observed", int)
        if flag not in (0, 1):
            raise SchemaError(f"cost-records.csv line {line}: observed must be 0 or 1",
                              file=str(path), line=line, column="observed")
        cost = _number(path, line, row, "cost", allow_empty=not flag, nonneg=True)
        recs.append((index[sid], _number(path, line, row, "seq", int),
                     _number(path, line, row, "t_end", nonneg=True),
                     0.0 if cost is None else cost, flag,
                     [_number(path, line, row, c) for c in design], line))
    recs.sort(key=lambda r: (r[0], r[1]))
    for a, b in zip(recs, recs[1:]):
        if a[0] == b[0] and a[1] == b[1]:
            raise SchemaError(f"cost-records.csv line {b[6]}: duplicate seq",
                              file=str(path), line=b[6])
    present = sorted({r[0] for r in recs})
    renum = {k: i for i, k in enumerate(present)}
    ids = {k: sid for sid, k in index.items()}
    labels = tuple(strata[ids[k]] for k in present) if strata is not None else None
    try:
        return CostRegressionData([r[3] for r in recs], np.array([r[5] for r in recs]),
                                  [r[2] for r in recs], [r[4] for r in recs],
                                  [renum[r[0]] for r in recs], labels, design)
    except ValueError as exc:
        raise SchemaError(f"cost-records.csv: {exc}", file=str(path)) from None


# --------------------------------------------------------------------------
# writers


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isinf(x)):
        return ""
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_cohort(directory, histories, costs, panels=None, state_space=None):
    """Write a cohort in the layout read by :func:`ingest`."""
    os.makedirs(directory, exist_ok=True)
    ss = state_space or histories[0].state_space
    with open(os.path.join(directory, "states.json"), "w") as fh:
        json.dump({"labels": list(ss.labels), "absorbing": sorted(ss.absorbing)}, fh, indent=2)
        fh.write("\n")
    cov_names = sorted({k for h in histories for k in h.covariates})
    with open(os.path.join(directory, "subjects.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject_id", "initial_state", "censor_time"] + cov_names)
        for h in histories:
            w.writerow([h.subject_id, h.initial_state, _fmt(h.censor_time)]
                       + [_fmt(h.covariates[c]) for c in cov_names])
    with open(os.path.join(directory, "events.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for h in histories:
            for ev in h.events:
                w.writerow([h.subject_id, _fmt(ev.time), ev.from_state, ev.to_state, _fmt(ev.cost)])
    # lumps that are not transition costs go to accrual.csv
    event_keys = {(k, ev.time) for k, h in enumerate(histories) for ev in h.events}
    with open(os.path.join(directory, "accrual.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ACCRUAL_COLUMNS)
        for k, t, c in zip(costs.lump_subject, costs.lump_time, costs.lump_cost):
            if (int(k), float(t)) not in event_keys:
                w.writerow([histories[k].subject_id, _fmt(t), _fmt(c)])
    with open(os.path.join(directory, "rates.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATE_COLUMNS)
        for k, a, b, v in zip(costs.piece_subject, costs.piece_start, costs.piece_end,
                              costs.piece_rate):
            w.writerow([histories[k].subject_id, _fmt(a), _fmt(b), _fmt(v)])
    if panels is not None:
        with open(os.path.join(directory, "panel.csv"), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PANEL_COLUMNS)
            names = {OBSERVED: "1", PARTIAL: "partial", NOT_AT_RISK: "0"}
            for k, h in enumerate(histories):
                for g in range(panels.grid.size - 1):
                    w.writerow([h.subject_id, _fmt(panels.grid[g]), _fmt(panels.grid[g + 1]),
                                _fmt(panels.increments[k, g]), names[int(panels.observed[k, g])]])


def write_json(path, obj):
    """Deterministic JSON (sorted keys, fixed separators, trailing newline)."""
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def write_table(path, rows, columns=None):
    rows = list(rows)
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) if isinstance(v, float) else v for k, v in r.items()})
