"""Deterministic synthetic workloads.

Each preset writes ``schema.json``, one CSV per table, SQL queries under
``queries/`` and a ``manifest.json``. Query literals are read off a witness
row (a concrete tuple of the join), so every generated query has a non-empty
result.

The ``correlated`` preset is built to fool an estimator that assumes
independence: a title's genre is mostly a function of its kind, popular
titles share one kind, and every fact table draws its movie references with a
heavy popularity skew.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .catalog import INT64, TEXT, Catalog, TableDef, write_schema
from .frontend import parse_query, plan_to_json
from .plan import aliases_of
from .splitter_dag import NotOrientable, build_dag, find_split_points

PRESETS = ("uniform", "correlated", "star", "chain", "fig2")

# base table sizes at scale 1
MOVIE_ROWS = {
    "title": 10000, "keyword": 1000, "company_name": 2000, "name": 10000,
    "cast_info": 10000, "movie_keyword": 60000, "movie_companies": 20000, "movie_info": 30000,
}
# popular titles: this fraction of titles receives HOT_SHARE[fact] of that fact's rows
HOT_FRACTION = 0.05
HOT_SHARE = {"cast_info": 0.8, "movie_keyword": 0.2, "movie_companies": 0.2, "movie_info": 0.2}
# keywords whose category sits far above the rest
OUTLIER_FRACTION = 0.01
# share of trap queries whose keyword filter is a range over those outliers
OUTLIER_TRAP_SHARE = 0.7
HOT_YEAR = 2010


@dataclass(frozen=True)
class GenSpec:
    preset: str
    scale: int = 1
    seed: int = 42
    num_queries: int | None = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; choose from {', '.join(PRESETS)}")
        if self.scale < 1:
            raise ValueError("scale must be a positive integer")


@dataclass
class _Table:
    defn: TableDef
    data: dict[str, np.ndarray]

    def rows(self) -> int:
        return len(next(iter(self.data.values())))


def _tdef(name, cols, fks=()) -> TableDef:
    return TableDef(name, tuple((c, INT64 if t == "i" else TEXT) for c, t in cols), "id", tuple(fks))


def _labels(prefix: str, codes: np.ndarray) -> np.ndarray:
    return np.array([f"{prefix}{int(c):02d}" for c in codes])


def _popularity(rng, n: int, exponent: float) -> np.ndarray:
    """Zipf-like weights over a random permutation of ``n`` ids."""
    ranks = rng.permutation(n)
    w = 1.0 / (ranks + 1.0) ** exponent
    return w / w.sum()


class _Builder:
    def __init__(self, spec: GenSpec):
        self.spec = spec
        self.rng = np.random.default_rng(spec.seed)
        self.tables: dict[str, _Table] = {}
        self.queries: list[tuple[str, str]] = []
        self.pairs: list[dict] = []

    def add(self, defn: TableDef, **cols) -> None:
        self.tables[defn.name] = _Table(defn, {c: cols[c] for c in defn.column_names})

    def col(self, table: str, column: str) -> np.ndarray:
        return self.tables[table].data[column]

    def lit(self, v) -> str:
        return f"'{v}'" if isinstance(v, str) else str(int(v))

    # -- correlated / uniform -------------------------------------------------
    def movie_schema(self, correlated: bool) -> None:
        rng, s = self.rng, self.spec.scale
        r = {t: n * s for t, n in MOVIE_ROWS.items()}
        n_t, n_kt, n_k, n_cn, n_n, n_it = r["title"], 1000, r["keyword"], r["company_name"], r["name"], 1000
        n_ci, n_mk, n_mc, n_mi = r["cast_info"], r["movie_keyword"], r["movie_companies"], r["movie_info"]
        n_kinds, n_genres = 20, 20
        self.add(_tdef("kind_type", [("id", "i"), ("kind", "t")]), id=np.arange(n_kt), kind=_labels("kind", np.arange(n_kt) % 50))
        if correlated:
            hot = rng.choice(n_t, size=int(n_t * HOT_FRACTION), replace=False)
            is_hot = np.zeros(n_t, bool)
            is_hot[hot] = True
            kind_id = rng.integers(1, n_kinds, n_t)
            kind_id[hot] = 0
            genre_of_kind = rng.permutation(n_genres)
            genre = np.where(rng.random(n_t) < 0.9, genre_of_kind[kind_id], rng.integers(0, n_genres, n_t))
            year = rng.integers(1950, 2020, n_t)
            year[hot] = np.where(rng.random(len(hot)) < 0.9, HOT_YEAR, year[hot])
        else:
            is_hot = None
            kind_id = rng.integers(0, n_kinds, n_t)
            genre = rng.integers(0, n_genres, n_t)
            year = rng.integers(1950, 2020, n_t)
        self.add(
            _tdef("title", [("id", "i"), ("kind_id", "i"), ("production_year", "i"), ("genre", "t")], [("kind_id", "kind_type", "id")]),
            id=np.arange(n_t), kind_id=kind_id, production_year=year, genre=_labels("g", genre),
        )
        if correlated:
            joint = float(np.mean((kind_id == 0) & (genre == genre_of_kind[0])))
            indep = float(np.mean(kind_id == 0) * np.mean(genre == genre_of_kind[0]))
            self.pairs.append({
                "table": "title", "predicates": ["kind_id = 0", f"genre = 'g{int(genre_of_kind[0]):02d}'"],
                "true_selectivity": joint, "independence_selectivity": indep, "gap": joint / indep,
            })

        def movies(fact, n):
            if is_hot is None:
                return rng.integers(0, n_t, n)
            share = HOT_SHARE[fact]
            p = np.where(is_hot, share / is_hot.sum(), (1 - share) / (n_t - is_hot.sum()))
            return rng.choice(n_t, size=n, p=p)

        k_pop = _popularity(rng, n_k, 0.8) if correlated else None
        category = rng.integers(0, 40, n_k)
        if correlated:
            out = rng.random(n_k) < OUTLIER_FRACTION
            category[out] = rng.integers(1900, 2000, int(out.sum()))
        self.add(_tdef("keyword", [("id", "i"), ("category", "i"), ("keyword", "t")]),
                 id=np.arange(n_k), category=category, keyword=_labels("kw", np.arange(n_k) % 97))
        self.add(_tdef("movie_keyword", [("id", "i"), ("movie_id", "i"), ("keyword_id", "i")],
                       [("movie_id", "title", "id"), ("keyword_id", "keyword", "id")]),
                 id=np.arange(n_mk), movie_id=movies("movie_keyword", n_mk), keyword_id=rng.choice(n_k, n_mk, p=k_pop))
        self.add(_tdef("company_name", [("id", "i"), ("country", "t")]),
                 id=np.arange(n_cn), country=_labels("c", rng.integers(0, 30, n_cn)))
        self.add(_tdef("movie_companies", [("id", "i"), ("movie_id", "i"), ("company_id", "i"), ("company_type", "i")],
                       [("movie_id", "title", "id"), ("company_id", "company_name", "id")]),
                 id=np.arange(n_mc), movie_id=movies("movie_companies", n_mc), company_id=rng.integers(0, n_cn, n_mc),
                 company_type=rng.integers(0, 4, n_mc))
        self.add(_tdef("name", [("id", "i"), ("gender", "t"), ("birth_year", "i")]),
                 id=np.arange(n_n), gender=_labels("s", rng.integers(0, 2, n_n)), birth_year=rng.integers(1900, 2000, n_n))
        role = rng.integers(0, 12, n_ci)
        self.add(_tdef("cast_info", [("id", "i"), ("movie_id", "i"), ("person_id", "i"), ("role_id", "i")],
                       [("movie_id", "title", "id"), ("person_id", "name", "id")]),
                 id=np.arange(n_ci), movie_id=movies("cast_info", n_ci), person_id=rng.integers(0, n_n, n_ci), role_id=role)
        info_type = rng.integers(0, 10, n_it)
        self.add(_tdef("info_type", [("id", "i"), ("info", "t")]), id=np.arange(n_it), info=_labels("it", info_type))
        mi_type = rng.integers(0, n_it, n_mi)
        if correlated:
            note = np.where(rng.random(n_mi) < 0.95, info_type[mi_type] * 3, rng.integers(0, 30, n_mi))
        else:
            note = rng.integers(0, 30, n_mi)
        self.add(_tdef("movie_info", [("id", "i"), ("movie_id", "i"), ("info_type_id", "i"), ("note", "i")],
                       [("movie_id", "title", "id"), ("info_type_id", "info_type", "id")]),
                 id=np.arange(n_mi), movie_id=movies("movie_info", n_mi), info_type_id=mi_type, note=note)
        if correlated:
            it0 = 0
            m = self.col("movie_info", "info_type_id") == it0
            v = int(info_type[it0]) * 3
            joint = float(np.mean(m & (note == v)))
            indep = float(np.mean(m) * np.mean(note == v))
            self.pairs.append({
                "table": "movie_info", "predicates": [f"info_type_id = {it0}", f"note = {v}"],
                "true_selectivity": joint, "independence_selectivity": indep, "gap": joint / indep,
            })
        self.n_titles = n_t

    FACTS = {
        "cast_info": ("ci", "name", "n", "person_id"),
        "movie_keyword": ("mk", "keyword", "k", "keyword_id"),
        "movie_companies": ("mc", "company_name", "cn", "company_id"),
        "movie_info": ("mi", "info_type", "it", "info_type_id"),
    }

    def movie_queries(self, correlated: bool, count: int) -> None:
        rng = self.rng
        self.by_movie = {f: _index(self.col(f, "movie_id")) for f in self.FACTS}
        for qi in range(count):
            if correlated and qi % 5 != 4:
                rels, preds = self._trap_query(outlier=rng.random() < OUTLIER_TRAP_SHARE)
            else:
                rels, preds = self._plain_query(correlated, qi)
            select = _select(rng, rels)
            self.queries.append((f"q{qi + 1:02d}", f"SELECT {select}\nFROM {', '.join(rels)}\nWHERE {' AND '.join(preds)};\n"))

    def _witness(self, facts, hot_only: bool, keyword_min: int | None = None) -> int:
        """A title with rows in every fact; popular and trap-shaped if ``hot_only``."""
        rng = self.rng
        t_kind = self.col("title", "kind_id")
        t_year = self.col("title", "production_year")
        if hot_only:
            pool = np.flatnonzero((t_kind == 0) & (t_year == HOT_YEAR))
        else:
            pool = np.arange(self.n_titles)
        while True:
            m = int(rng.choice(pool))
            if not all(len(self.by_movie[f].get(m, ())) for f in facts):
                continue
            if keyword_min is None or self._outlier_rows(m, keyword_min).size:
                return m

    def _outlier_rows(self, m: int, keyword_min: int) -> np.ndarray:
        rows = self.by_movie["movie_keyword"].get(m, np.empty(0, np.int64))
        cats = self.col("keyword", "category")[self.col("movie_keyword", "keyword_id")[rows]]
        return rows[cats >= keyword_min]

    def _title_filter(self, m: int, trap: bool) -> list[str]:
        preds = [f"t.kind_id = {int(self.col('title', 'kind_id')[m])}", f"t.genre = '{self.col('title', 'genre')[m]}'"]
        if trap:
            preds.append(f"t.production_year = {int(self.col('title', 'production_year')[m])}")
        return preds

    def _kind_type(self, m: int) -> tuple[list[str], list[str]]:
        kind = self.col("kind_type", "kind")[self.col("title", "kind_id")[m]]
        return ["kind_type AS kt"], ["t.kind_id = kt.id", f"kt.kind = '{kind}'"]

    def _trap_query(self, outlier: bool) -> tuple[list[str], list[str]]:
        """Underestimated popular titles, a fanning-out fact and a remote reducer.

        The title filter's predicates are correlated, so the estimator sees a
        handful of rows where there are hundreds, and those titles carry the
        fact-table skew. The only selective predicate sits on the keyword
        side, so joining cast_info early fans out.
        """
        rng = self.rng
        other = str(rng.choice(["movie_companies", "movie_info"]))
        m = self._witness(["cast_info", "movie_keyword", other], hot_only=True, keyword_min=40 if outlier else None)
        rels, preds = ["title AS t"], self._title_filter(m, trap=True)
        if rng.random() < 0.5:
            r, p = self._kind_type(m)
            rels += r
            preds += p
        rels.append("cast_info AS ci")
        preds.append("ci.movie_id = t.id")
        if rng.random() < 0.5:
            rels.append("name AS n")
            preds += ["ci.person_id = n.id", f"n.birth_year >= {int(rng.integers(1900, 1920))}"]
        rels += ["movie_keyword AS mk", "keyword AS k"]
        preds += ["mk.movie_id = t.id", "mk.keyword_id = k.id"]
        if outlier:
            preds.append("k.category >= 40")
        else:
            row = int(rng.choice(self.by_movie["movie_keyword"][m]))
            preds.append(f"k.keyword = '{self.col('keyword', 'keyword')[int(self.col('movie_keyword', 'keyword_id')[row])]}'")
        fa, dim, da, fk = self.FACTS[other]
        row = int(rng.choice(self.by_movie[other][m]))
        rels += [f"{other} AS {fa}", f"{dim} AS {da}"]
        preds += [f"{fa}.movie_id = t.id", f"{fa}.{fk} = {da}.id", self._dim_filter(dim, da, int(self.col(other, fk)[row]))]
        return rels, preds

    def _plain_query(self, correlated: bool, qi: int) -> tuple[list[str], list[str]]:
        rng = self.rng
        nf = int(rng.choice([1, 2, 3, 3, 4]))
        chosen = sorted(rng.choice(list(self.FACTS), size=nf, replace=False).tolist())
        m = self._witness(chosen, hot_only=False)
        rels = ["title AS t"]
        if correlated or rng.random() < 0.5:
            preds = self._title_filter(m, trap=False)
        else:
            y = int(self.col("title", "production_year")[m])
            preds = [f"t.production_year >= {y - 3}", f"t.production_year <= {y + 3}"]
        if rng.random() < 0.3:
            r, p = self._kind_type(m)
            rels += r
            preds += p
        for f in chosen:
            fa, dim, da, fk = self.FACTS[f]
            row = int(rng.choice(self.by_movie[f][m]))
            rels.append(f"{f} AS {fa}")
            preds.append(f"{fa}.movie_id = t.id")
            if f == "movie_info" and correlated:
                preds.append(f"{fa}.note = {int(self.col(f, 'note')[row])}")
            if f == "movie_companies" and rng.random() < 0.5:
                preds.append(f"{fa}.company_type = {int(self.col(f, 'company_type')[row])}")
            if rng.random() < 0.85:
                ref = int(self.col(f, fk)[row])
                rels.append(f"{dim} AS {da}")
                preds += [f"{fa}.{fk} = {da}.id", self._dim_filter(dim, da, ref)]
        return rels, preds

    def _dim_filter(self, dim: str, alias: str, row: int) -> str:
        if dim == "name":
            return f"{alias}.birth_year = {int(self.col(dim, 'birth_year')[row])}"
        if dim == "keyword":
            return f"{alias}.category = {int(self.col(dim, 'category')[row])}"
        if dim == "company_name":
            return f"{alias}.country = '{self.col(dim, 'country')[row]}'"
        return f"{alias}.info = '{self.col(dim, 'info')[row]}'"

    # -- star --------------------------------------------------------------------
    def star(self, count: int) -> None:
        rng, s = self.rng, self.spec.scale
        dims = {"d1": 1000 * s, "d2": 2000 * s, "d3": 3000 * s, "d4": 4000 * s}
        for d, n in dims.items():
            self.add(_tdef(d, [("id", "i"), ("attr", "i"), ("cat", "t")]),
                     id=np.arange(n), attr=rng.integers(0, 100, n), cat=_labels("c", rng.integers(0, 20, n)))
        n_f = 40000 * s
        cols = {f"{d}_id": rng.integers(0, n, n_f) for d, n in dims.items()}
        self.add(_tdef("fact", [("id", "i"), *[(f"{d}_id", "i") for d in dims], ("measure", "i")],
                       [(f"{d}_id", d, "id") for d in dims]),
                 id=np.arange(n_f), measure=rng.integers(0, 1000, n_f), **cols)
        for qi in range(count):
            k = int(rng.choice([3, 4]))
            use = sorted(rng.choice(list(dims), size=k, replace=False).tolist())
            w = int(rng.integers(0, n_f))
            rels = ["fact AS f"] + [f"{d} AS {d}" for d in use]
            preds = []
            for d in use:
                ref = int(cols[f"{d}_id"][w])
                preds.append(f"f.{d}_id = {d}.id")
                if rng.random() < 0.5:
                    preds.append(f"{d}.cat = '{self.col(d, 'cat')[ref]}'")
                else:
                    a = int(self.col(d, "attr")[ref])
                    preds.append(f"{d}.attr <= {a + int(rng.integers(0, 30))}")
            sel = f"COUNT(*), SUM(f.measure)" if qi % 2 else f"{use[0]}.cat, COUNT(*)"
            group = f"\nGROUP BY {use[0]}.cat" if not qi % 2 else ""
            self.queries.append((f"q{qi + 1:02d}", f"SELECT {sel}\nFROM {', '.join(rels)}\nWHERE {' AND '.join(preds)}{group};\n"))

    # -- chain ---------------------------------------------------------------------
    def chain(self, count: int) -> None:
        rng, s = self.rng, self.spec.scale
        sizes = [5000 * s, 4000 * s, 3000 * s, 2000 * s, 1000 * s]
        for i in reversed(range(5)):
            name = f"T{i + 1}"
            n = sizes[i]
            cols = [("id", "i"), ("a", "i"), ("b", "t")]
            fks = []
            extra = {}
            if i < 4:
                cols.append(("next_id", "i"))
                fks.append(("next_id", f"T{i + 2}", "id"))
                extra["next_id"] = rng.integers(0, sizes[i + 1], n)
            self.add(_tdef(name, cols, fks), id=np.arange(n), a=rng.integers(0, 100, n),
                     b=_labels("b", rng.integers(0, 10, n)), **extra)
        for qi in range(count):
            joins = int(rng.integers(2, 5))
            start = int(rng.integers(0, 5 - joins))
            names = [f"T{i + 1}" for i in range(start, start + joins + 1)]
            row = int(rng.integers(0, sizes[start]))
            rows = [row]
            for i in range(start, start + joins):
                rows.append(int(self.col(f"T{i + 1}", "next_id")[rows[-1]]))
            preds = [f"{names[j]}.next_id = {names[j + 1]}.id" for j in range(joins)]
            for name, r in zip(names, rows):
                if rng.random() < 0.5:
                    a = int(self.col(name, "a")[r])
                    preds.append(f"{name}.a < {a + 1 + int(rng.integers(0, 40))}")
            preds.append(f"{names[-1]}.b = '{self.col(names[-1], 'b')[rows[-1]]}'")
            sel = "COUNT(*)" if qi % 2 else f"{names[0]}.b, MIN({names[-1]}.a), COUNT(*)"
            group = f"\nGROUP BY {names[0]}.b" if not qi % 2 else ""
            self.queries.append((f"q{qi + 1:02d}", f"SELECT {sel}\nFROM {', '.join(names)}\nWHERE {' AND '.join(preds)}{group};\n"))

    # -- fig2 ----------------------------------------------------------------------
    def fig2(self) -> None:
        rng, s = self.rng, self.spec.scale
        n = {"kt": 1000, "t": 5000 * s, "cct": 1000, "cc": 2000 * s, "k": 3000 * s, "mk": 8000 * s,
             "n": 5000 * s, "chn": 2000 * s, "ci": 20000 * s}
        self.add(_tdef("kt", [("id", "i"), ("kind", "t")]), id=np.arange(n["kt"]), kind=_labels("kind", np.arange(n["kt"]) % 7))
        self.add(_tdef("t", [("id", "i"), ("kind_id", "i"), ("production_year", "i"), ("title", "t")], [("kind_id", "kt", "id")]),
                 id=np.arange(n["t"]), kind_id=rng.integers(0, n["kt"], n["t"]), production_year=rng.integers(1950, 2020, n["t"]),
                 title=_labels("title", rng.integers(0, 99, n["t"])))
        self.add(_tdef("cct", [("id", "i"), ("kind", "t")]), id=np.arange(n["cct"]), kind=_labels("cc", np.arange(n["cct"]) % 4))
        self.add(_tdef("cc", [("id", "i"), ("movie_id", "i"), ("status_id", "i")], [("movie_id", "t", "id"), ("status_id", "cct", "id")]),
                 id=np.arange(n["cc"]), movie_id=rng.integers(0, n["t"], n["cc"]), status_id=rng.integers(0, n["cct"], n["cc"]))
        self.add(_tdef("k", [("id", "i"), ("keyword", "t")]), id=np.arange(n["k"]), keyword=_labels("kw", rng.integers(0, 4, n["k"])))
        self.add(_tdef("mk", [("id", "i"), ("movie_id", "i"), ("keyword_id", "i")], [("movie_id", "t", "id"), ("keyword_id", "k", "id")]),
                 id=np.arange(n["mk"]), movie_id=rng.integers(0, n["t"], n["mk"]), keyword_id=rng.integers(0, n["k"], n["mk"]))
        self.add(_tdef("n", [("id", "i"), ("gender", "t")]), id=np.arange(n["n"]), gender=_labels("s", rng.integers(0, 2, n["n"])))
        self.add(_tdef("chn", [("id", "i"), ("name", "t")]), id=np.arange(n["chn"]), name=_labels("ch", rng.integers(0, 2, n["chn"])))
        self.add(_tdef("ci", [("id", "i"), ("movie_id", "i"), ("person_id", "i"), ("person_role_id", "i")],
                       [("movie_id", "t", "id"), ("person_id", "n", "id"), ("person_role_id", "chn", "id")]),
                 id=np.arange(n["ci"]), movie_id=rng.integers(0, n["t"], n["ci"]), person_id=rng.integers(0, n["n"], n["ci"]),
                 person_role_id=rng.integers(0, n["chn"], n["ci"]))
        sql = (
            "SELECT MIN(t.title), COUNT(*)\n"
            "FROM t, kt, cc, cct, mk, k, ci, n, chn\n"
            "WHERE t.kind_id = kt.id AND kt.kind = 'kind00'\n"
            "  AND cc.movie_id = t.id AND cc.status_id = cct.id AND cct.kind = 'cc00'\n"
            "  AND mk.movie_id = t.id AND mk.keyword_id = k.id AND k.keyword = 'kw00'\n"
            "  AND ci.movie_id = t.id AND ci.person_id = n.id AND ci.person_role_id = chn.id\n"
            "  AND n.gender = 's00' AND chn.name = 'ch00';\n"
        )
        self.queries.append(("fig2", sql))

    # -- output --------------------------------------------------------------------
    def run(self) -> None:
        p, nq = self.spec.preset, self.spec.num_queries
        if p in ("correlated", "uniform"):
            self.movie_schema(p == "correlated")
            self.movie_queries(p == "correlated", nq or 24)
        elif p == "star":
            self.star(nq or 12)
        elif p == "chain":
            self.chain(nq or 10)
        else:
            self.fig2()


def _index(values: np.ndarray) -> dict[int, np.ndarray]:
    order = np.argsort(values, kind="stable")
    uniq, starts = np.unique(values[order], return_index=True)
    bounds = list(starts[1:]) + [len(order)]
    return {int(u): order[s:e] for u, s, e in zip(uniq, starts, bounds)}


def _select(rng, rels: list[str]) -> str:
    alias = rels[0].split()[-1]
    if rng.random() < 0.5:
        return f"COUNT(*), MIN({alias}.production_year)"
    return f"MIN({alias}.genre), COUNT(*)"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_csv(path: Path, t: _Table) -> None:
    names = t.defn.column_names
    cols = [t.data[c].tolist() for c in names]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        w.writerows(zip(*cols))


def generate(spec: GenSpec, out_dir: str | Path) -> dict:
    """Write the workload for ``spec`` into ``out_dir`` and return its manifest."""
    out = Path(out_dir)
    (out / "queries").mkdir(parents=True, exist_ok=True)
    b = _Builder(spec)
    b.run()
    defs = [t.defn for t in b.tables.values()]
    write_schema(defs, out / "schema.json")
    for name, t in b.tables.items():
        _write_csv(out / f"{name}.csv", t)
    catalog = Catalog()
    for name, t in b.tables.items():
        catalog.add_table(t.defn, t.data)
        catalog.analyze(name)
    query_info = []
    for name, sql in b.queries:
        (out / "queries" / f"{name}.sql").write_text(sql)
        plan = parse_query(sql, catalog)
        if spec.preset == "fig2":
            (out / "queries" / f"{name}.plan.json").write_text(plan_to_json(plan) + "\n")
        try:
            points = find_split_points(build_dag(plan, catalog))
        except NotOrientable:
            points = None
        nrel = len(aliases_of(plan.root))
        query_info.append({"name": name, "relations": nrel, "joins": nrel - 1, "expected_split_points": points})
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "spec": {"preset": spec.preset, "scale": spec.scale, "seed": spec.seed, "num_queries": len(b.queries)},
        "files": [{"path": str(p.relative_to(out)), "sha256": _sha256(p)} for p in files],
        "tables": {name: t.rows() for name, t in sorted(b.tables.items())},
        "correlated_pairs": b.pairs,
        "queries": query_info,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
