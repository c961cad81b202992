"""Dataset ingestion, reindexing, splitting and canonical export.

Interactions are carried as pandas frames with one row per interaction and
columns ``user, item, rating, timestamp, line``; ``line`` is the source line
number and breaks timestamp ties (a later line is a later interaction).
"""
import logging
import pickle
from enum import Enum
from pathlib import Path
from typing import NamedTuple, Optional

import networkx as nx
import numpy as np
import pandas as pd

from hyperrec.data_models import DatasetStats
from hyperrec.errors import DataError

logger = logging.getLogger(__name__)

MAX_MALFORMED_FRACTION = 0.01
INTERACTION_COLUMNS = ['user', 'item', 'rating', 'timestamp', 'line']


class InteractionFormat(str, Enum):
    MOVIELENS_DAT = 'movielens_dat'
    TSV = 'tsv'


def _read_lines(path) -> list[str]:
    path = Path(path)
    try:
        with open(path, encoding='utf-8') as inp:
            return inp.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _dense_ids(column: pd.Series, path) -> pd.Series:
    """Convert external ids to integers when every id is an integer literal."""
    try:
        converted = column.astype(np.int64)
    except (ValueError, TypeError):
        return column
    spellings = column.groupby(converted).nunique()
    clashes = spellings[spellings > 1]
    if not clashes.empty:
        value = clashes.index[0]
        raw = sorted(column[converted == value].unique())
        raise DataError(f"{path}: {column.name} ids {raw} all read as {value}")
    return converted


def _check_malformed(path, malformed: list[int], total: int):
    if not malformed:
        return
    if len(malformed) > MAX_MALFORMED_FRACTION * total:
        raise DataError(
            f"{path}: {len(malformed)} of {total} lines are malformed (first at line {malformed[0]})"
        )
    logger.warning("%s: skipped %d malformed lines (first at line %d)", path, len(malformed), malformed[0])


def parse_interactions(path, fmt=InteractionFormat.TSV) -> pd.DataFrame:
    """
    Parse ``user::item::rating::timestamp`` (movielens_dat) or whitespace
    separated ``user item rating [timestamp]`` (tsv) lines.

    The malformed-line count is kept in ``frame.attrs['malformed_lines']``.
    """
    fmt = InteractionFormat(fmt)
    records, malformed, total = [], [], 0
    for number, line in enumerate(_read_lines(path), 1):
        line = line.strip()
        if not line:
            continue
        total += 1
        parts = line.split('::') if fmt is InteractionFormat.MOVIELENS_DAT else line.split()
        if len(parts) not in (3, 4):
            malformed.append(number)
            continue
        try:
            rating = float(parts[2])
            timestamp = int(parts[3]) if len(parts) == 4 else 0
        except ValueError:
            malformed.append(number)
            continue
        records.append((parts[0], parts[1], rating, timestamp, number))

    _check_malformed(path, malformed, total)
    frame = pd.DataFrame.from_records(records, columns=INTERACTION_COLUMNS)
    if frame.empty:
        logger.warning("%s contains no interactions", path)
    else:
        frame['user'] = _dense_ids(frame['user'], path)
        frame['item'] = _dense_ids(frame['item'], path)
    frame.attrs['malformed_lines'] = len(malformed)
    logger.info("Parsed %d interactions from %s", len(frame), path)
    return frame


def parse_trust(path) -> pd.DataFrame:
    """
    Parse whitespace separated ``truster trustee [weight]`` lines.

    Self-loops and duplicate edges are dropped; counts are kept in
    ``frame.attrs``.
    """
    records, malformed, total = [], [], 0
    for number, line in enumerate(_read_lines(path), 1):
        parts = line.split()
        if not parts:
            continue
        total += 1
        if len(parts) not in (2, 3):
            malformed.append(number)
            continue
        records.append((parts[0], parts[1]))

    _check_malformed(path, malformed, total)
    frame = pd.DataFrame.from_records(records, columns=['truster', 'trustee'])
    if not frame.empty:
        frame['truster'] = _dense_ids(frame['truster'], path)
        frame['trustee'] = _dense_ids(frame['trustee'], path)
    self_loops = frame['truster'] == frame['trustee']
    if self_loops.any():
        logger.warning("%s: dropped %d self-loops", path, int(self_loops.sum()))
    frame = frame[~self_loops].drop_duplicates().reset_index(drop=True)
    frame.attrs['malformed_lines'] = len(malformed)
    frame.attrs['dropped_self_loops'] = int(self_loops.sum())
    logger.info("Parsed %d trust edges from %s", len(frame), path)
    return frame


def positives_by_user(frame: pd.DataFrame, n_users: int, column: str = 'item') -> list[np.ndarray]:
    """Sorted arrays of the ``column`` ids of each user in ``frame``."""
    result = [np.empty(0, dtype=np.int64) for _ in range(n_users)]
    if frame.empty:
        return result
    grouped = frame.groupby('user')[column].apply(lambda s: np.sort(s.to_numpy(dtype=np.int64)))
    for user, items in grouped.items():
        result[int(user)] = items
    return result


class InteractionDataset:
    """
    Reindexed interactions with per-user indexes and an optional trust graph.
    Built datasets are not modified afterwards.
    """

    def __init__(self, interactions: pd.DataFrame, user_ids: np.ndarray, item_ids: np.ndarray,
                 social: Optional[np.ndarray] = None, stats: Optional[DatasetStats] = None, name: str = ''):
        self.interactions = interactions
        self.user_ids = user_ids
        self.item_ids = item_ids
        self.n_users = len(user_ids)
        self.n_items = len(item_ids)
        self.social = social if social is not None else np.empty((0, 2), dtype=np.int64)
        self.name = name
        self.rating_range = (float(interactions['rating'].min()), float(interactions['rating'].max()))
        self.by_user = positives_by_user(interactions, self.n_users)
        self.neighbors = self._neighbor_index()
        self.stats = stats or self.compute_stats()

    def _neighbor_index(self) -> list[np.ndarray]:
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.n_users))
        graph.add_edges_from(map(tuple, self.social.tolist()))
        return [np.array(sorted(graph.successors(user)), dtype=np.int64) for user in range(self.n_users)]

    @property
    def density(self) -> float:
        return len(self.interactions) / (self.n_users * self.n_items)

    @property
    def has_social(self) -> bool:
        return len(self.social) > 0

    def compute_stats(self, **counts) -> DatasetStats:
        return DatasetStats(
            n_users=self.n_users,
            n_items=self.n_items,
            n_ratings=len(self.interactions),
            density=self.density,
            n_social=len(self.social),
            social_density=len(self.social) / (self.n_users * self.n_users),
            rating_min=self.rating_range[0],
            rating_max=self.rating_range[1],
            **counts,
        )

    def export(self, directory):
        """Write the canonical ``interactions.tsv``, ``idmap.tsv`` and ``social.tsv`` files."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.interactions[['user', 'item', 'rating', 'timestamp']].to_csv(
            directory / 'interactions.tsv', sep='\t', header=False, index=False, lineterminator='\n'
        )
        idmap = pd.concat([
            pd.DataFrame({'kind': 'user', 'external': self.user_ids, 'internal': np.arange(self.n_users)}),
            pd.DataFrame({'kind': 'item', 'external': self.item_ids, 'internal': np.arange(self.n_items)}),
        ])
        idmap.to_csv(directory / 'idmap.tsv', sep='\t', index=False, lineterminator='\n')
        if self.has_social:
            pd.DataFrame(self.social).to_csv(
                directory / 'social.tsv', sep='\t', header=False, index=False, lineterminator='\n'
            )

    def save(self, file_name):
        with open(file_name, 'wb') as outp:
            pickle.dump(self, outp, pickle.HIGHEST_PROTOCOL)

    @classmethod
    def load(cls, file_name) -> 'InteractionDataset':
        try:
            with open(file_name, 'rb') as inp:
                return pickle.load(inp)
        except (OSError, EOFError, pickle.UnpicklingError) as exc:
            raise DataError(f"cannot read prepared dataset {file_name}: {exc}") from exc


def build_dataset(interactions: pd.DataFrame, edges: Optional[pd.DataFrame] = None,
                  min_rating_as_positive: float = 0.0, name: str = '') -> InteractionDataset:
    """
    Deduplicate and densely reindex interactions (and trust edges).

    A repeated (user, item) pair keeps its latest interaction. External ids
    are mapped to 0-based ids in sorted order. Trust edges whose endpoints
    have no interactions are dropped.
    """
    if interactions is None or interactions.empty:
        raise DataError("cannot build a dataset from an empty interaction list")
    frame = interactions
    if min_rating_as_positive > 0:
        frame = frame[frame['rating'] >= min_rating_as_positive]
        if frame.empty:
            raise DataError(f"no interaction has rating >= {min_rating_as_positive}")

    frame = frame.sort_values(['user', 'item', 'timestamp', 'line'], kind='stable')
    deduped = frame.drop_duplicates(['user', 'item'], keep='last')
    duplicates = len(frame) - len(deduped)
    if duplicates:
        logger.info("Removed %d duplicate (user, item) interactions", duplicates)

    user_ids, users = np.unique(deduped['user'].to_numpy(), return_inverse=True)
    item_ids, items = np.unique(deduped['item'].to_numpy(), return_inverse=True)
    reindexed = pd.DataFrame({
        'user': users.astype(np.int64),
        'item': items.astype(np.int64),
        'rating': deduped['rating'].to_numpy(dtype=np.float64),
        'timestamp': deduped['timestamp'].to_numpy(dtype=np.int64),
        'line': deduped['line'].to_numpy(dtype=np.int64),
    }).sort_values(['user', 'timestamp', 'line'], kind='stable').reset_index(drop=True)

    social, dropped_edges, self_loops = None, 0, 0
    if edges is not None and not edges.empty:
        self_loops = edges.attrs.get('dropped_self_loops', 0)
        lookup = pd.Series(np.arange(len(user_ids)), index=user_ids)
        truster = edges['truster'].map(lookup)
        trustee = edges['trustee'].map(lookup)
        known = truster.notna() & trustee.notna()
        dropped_edges = int((~known).sum())
        if dropped_edges:
            logger.warning("Dropped %d trust edges with users outside the interaction data", dropped_edges)
        social = np.unique(np.stack([truster[known].to_numpy(dtype=np.int64),
                                     trustee[known].to_numpy(dtype=np.int64)], axis=1), axis=0)
        social = social[social[:, 0] != social[:, 1]]

    dataset = InteractionDataset(reindexed, user_ids, item_ids, social, name=name)
    dataset.stats = dataset.compute_stats(
        malformed_lines=interactions.attrs.get('malformed_lines', 0),
        duplicates_removed=duplicates,
        dropped_self_loops=self_loops,
        dropped_social_edges=dropped_edges,
    )
    logger.info("Built dataset %s: %d users, %d items, %d interactions, density %s",
                name or '<unnamed>', dataset.n_users, dataset.n_items, len(reindexed),
                dataset.stats.density_percent)
    return dataset


class DataSplit(NamedTuple):
    train: pd.DataFrame
    validation: pd.DataFrame
    test: pd.DataFrame
    mode: str
    non_evaluable_users: int = 0

    def export(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for part in ('train', 'validation', 'test'):
            getattr(self, part)[['user', 'item', 'rating', 'timestamp']].to_csv(
                directory / f"{self.mode}_{part}.tsv", sep='\t', header=False, index=False, lineterminator='\n'
            )


def leave_one_out_split(ds: InteractionDataset) -> DataSplit:
    """
    Per user the last interaction goes to test and the second-last to
    validation. Users with fewer than 3 interactions stay entirely in train
    and are not evaluated.
    """
    frame = ds.interactions.sort_values(['user', 'timestamp', 'line'], kind='stable')
    from_end = frame.groupby('user').cumcount(ascending=False)
    counts = frame.groupby('user')['item'].transform('size')
    evaluable = counts >= 3
    test = frame[evaluable & (from_end == 0)]
    validation = frame[evaluable & (from_end == 1)]
    train = frame[~evaluable | (from_end >= 2)]
    short_users = int(ds.n_users - frame.loc[evaluable, 'user'].nunique())
    if short_users:
        logger.warning("%d users have fewer than 3 interactions and are excluded from evaluation", short_users)
    return DataSplit(train.reset_index(drop=True), validation.reset_index(drop=True),
                     test.reset_index(drop=True), 'loo', short_users)


def ratio_split(ds: InteractionDataset, seed: int = 0) -> DataSplit:
    """Uniform random 60/20/20 partition of the interactions."""
    n = len(ds.interactions)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(0.6 * n))
    n_validation = int(round(0.2 * n))
    frame = ds.interactions
    parts = (order[:n_train], order[n_train:n_train + n_validation], order[n_train + n_validation:])
    train, validation, test = (frame.iloc[np.sort(p)].reset_index(drop=True) for p in parts)
    return DataSplit(train, validation, test, 'ratio', 0)


def make_split(ds: InteractionDataset, mode: str, seed: int = 0) -> DataSplit:
    if mode == 'loo':
        return leave_one_out_split(ds)
    if mode == 'ratio':
        return ratio_split(ds, seed)
    raise DataError(f"unknown split mode '{mode}'")


def load_raw_dataset(path, fmt: str = 'auto', trust: Optional[str] = None,
                     min_rating_as_positive: float = 0.0) -> InteractionDataset:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"interaction file not found: {path}")
    if fmt == 'auto':
        fmt = InteractionFormat.MOVIELENS_DAT if path.suffix == '.dat' else InteractionFormat.TSV
    interactions = parse_interactions(path, fmt)
    edges = None
    if trust:
        if not Path(trust).is_file():
            raise DataError(f"trust file not found: {trust}")
        edges = parse_trust(trust)
    return build_dataset(interactions, edges, min_rating_as_positive, name=path.stem)
