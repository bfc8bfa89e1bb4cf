"""The candidate-subset data loader driving a training run."""

import math
import time
from concurrent.futures import ThreadPoolExecutor

from .. import rng as rng_mod
from .. import training as tr
from ..data import batch_split
from .items import LearningItem, ScoreRecord
from .scoring import make_external_reference, score_max_loss_delta, score_sample_loss
from .strategies import order_next, sample_batch, select_candidates


def build_items(n, kind, batch_size, seed, epoch):
    if kind == "batch":
        return [LearningItem(i, "batch", tuple(b)) for i, b in enumerate(batch_split(n, batch_size, seed, epoch=epoch))]
    return [LearningItem(i, "sample", (i,)) for i in range(n)]


class Scorer:
    """Scores items against a training state, optionally on per-candidate clones in threads."""

    def __init__(self, config, train, prep, workers=1):
        self.config = config
        self.train = train
        self.prep = prep
        self.workers = workers
        self.reference = None

    def _score_one(self, state, item):
        cfg = self.config
        if cfg.scorer == "sample_loss":
            return score_sample_loss(state.model, item, self.train, self.prep)
        reference = self.reference if cfg.scorer == "max_loss_delta_external" else None
        return score_max_loss_delta(state.model, state.optimizer, item, self.train, self.prep,
                                    reference=reference, mode=cfg.delta_mode)

    def score(self, state, items):
        """``{item_id: ScoreRecord}`` for ``items``; identical for any worker count."""
        if self.workers > 1 and len(items) > 1:
            def work(item):
                return item.item_id, self._score_one(state.clone(), item)

            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                pairs = list(pool.map(work, items))
        else:
            pairs = [(item.item_id, self._score_one(state, item)) for item in items]
        return {i: ScoreRecord(i, float(s), state.step) for i, s in sorted(pairs)}


def run_poa_training(train, test, spec, config, loader, seed, run_id="poa", workers=1, on_scores=None):
    """Train with the loader picking each step's data from ``kappa`` scored candidates.

    ``on_scores`` (optional) is called with every ``{item_id: ScoreRecord}``
    mapping the loader acts on. Returns ``(records, final_state)``.
    """
    state = tr.TrainState.create(spec, config, seed)
    schedule = tr.LRSchedule(state.optimizer, config)
    scorer = Scorer(loader, train, config.preprocess, workers)
    started = time.perf_counter()
    records = []
    for epoch in range(config.epochs):
        state.epoch = epoch
        schedule.start_epoch(epoch)
        if loader.scorer == "max_loss_delta_external":
            scorer.reference = make_external_reference(
                test, loader.reference_size, seed, epoch if loader.resample_reference else 0)
        items = build_items(len(train), loader.item_kind, config.batch_size, seed, epoch)
        by_id = {item.item_id: item for item in items}
        cached = scorer.score(state, items) if loader.rescore == "epoch" else None
        order_rng = rng_mod.stream(seed, "order", epoch)
        sample_rng = rng_mod.stream(seed, "sample", epoch)

        def scores_for(ids, fresh):
            if cached is not None:
                out = {i: cached[i] for i in ids}
            else:
                missing = [by_id[i] for i in ids if i not in fresh]
                fresh.update(scorer.score(state, missing))
                out = {i: fresh[i] for i in ids}
            if on_scores is not None:
                on_scores(out)
            return {i: r.score for i, r in out.items()}

        def next_batch(pool):
            fresh = {}
            if loader.ordering:
                if loader.item_kind == "batch":
                    cands = select_candidates(pool, min(loader.kappa, len(pool)), order_rng)
                    pick = order_next(scores_for(cands, fresh), loader.strategy)
                    pool.remove(pick)
                    return list(by_id[pick].indices)
                chosen = []
                while pool and len(chosen) < config.batch_size:
                    cands = select_candidates(pool, min(loader.kappa, len(pool)), order_rng)
                    pick = order_next(scores_for(cands, fresh), loader.strategy)
                    pool.remove(pick)
                    chosen.append(by_id[pick].indices[0])
                return chosen
            cands = select_candidates(list(by_id), min(loader.kappa, len(by_id)), order_rng)
            scores = scores_for(cands, fresh)
            count = 1 if loader.item_kind == "batch" else config.batch_size
            picks = sample_batch(scores, loader.strategy, sample_rng, count, loader.epsilon)
            if loader.item_kind == "batch":
                return list(by_id[picks[0]].indices)
            return [by_id[p].indices[0] for p in picks]

        acc = tr.EpochAccumulator()
        # ordering consumes the pool; sampling draws with replacement for as many steps as a split has batches
        pool = list(by_id) if loader.ordering else None
        steps_left = math.ceil(len(train) / config.batch_size)
        while (pool if loader.ordering else steps_left > 0):
            steps_left -= 1
            idx = next_batch(pool)
            loss, a = tr.train_step(state, train.images[idx], train.labels[idx], config.preprocess)
            if not math.isfinite(loss):
                records.append(tr.diverged_record(run_id, state, started))
                return records, state
            acc.add(loss, a, len(idx))
            schedule.after_step(loss)
        state.epoch = epoch + 1
        records.append(tr.epoch_record(run_id, state, acc, test, config.preprocess, started, config.eval_batch_size))
    return records, state
