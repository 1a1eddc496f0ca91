"""
Embedding-dimension sweep: one model per k, closed- and open-world best HM.
"""

from dataclasses import asdict, dataclass
from typing import List, Sequence

import pandas as pd
import structlog

from vgce.models.concepts import World
from vgce.schemas.config import RunConfig
from vgce.services.dataset_io import Dataset
from vgce.services.evaluation import evaluate_model
from vgce.services.trainer import train

logger = structlog.get_logger(__name__)


@dataclass
class SweepRow:
    k: int
    cw_best_hm: float
    cw_auc: float
    ow_best_hm: float
    ow_auc: float
    final_loss: float


def sweep_embedding_dim(dataset: Dataset, config: RunConfig, k_values: Sequence[int], threads: int = 1) -> List[SweepRow]:
    rows = []
    for k in k_values:
        cfg = config.model_copy(update={"model": config.model.model_copy(update={"k": int(k)})})
        result = train(dataset, cfg)
        cw = evaluate_model(dataset, result.params, cfg.model_copy(update={"world": World.CLOSED}), threads=threads)
        ow = evaluate_model(dataset, result.params, cfg.model_copy(update={"world": World.OPEN}), threads=threads)
        final_loss = result.log[-1].loss_total if result.log else float("nan")
        rows.append(SweepRow(int(k), cw.best_hm, cw.auc, ow.best_hm, ow.auc, final_loss))
        logger.info("sweep point", k=k, cw_best_hm=cw.best_hm, ow_best_hm=ow.best_hm)
    return rows


def sweep_frame(rows: Sequence[SweepRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows])
