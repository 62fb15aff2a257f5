"""Map throughput: maps per second for ours, gradient saliency and CAM."""

import logging
import time
from dataclasses import asdict, dataclass
from typing import Callable, Dict, List

import numpy as np
import torch

from src.engines.explainers import cam, saliency
from src.nets.attributor import AttributorModel
from src.utils.errors import ConfigurationError

logger = logging.getLogger(__name__)

MIN_REPETITIONS = 10


@dataclass
class ThroughputMeasurement:
    method: str
    n_images: int
    repetitions: int
    total_seconds: float
    maps_per_second: float
    sweep_seconds_std: float

    def to_dict(self) -> Dict:
        return asdict(self)


def measure_throughput(method: str, produce: Callable[[torch.Tensor], torch.Tensor], images: torch.Tensor,
                       repetitions: int = MIN_REPETITIONS) -> ThroughputMeasurement:
    """Time ``repetitions`` full sweeps over ``images``; maps/second = maps emitted / wall time."""
    if repetitions < MIN_REPETITIONS:
        raise ConfigurationError(f"Throughput needs at least {MIN_REPETITIONS} repetitions, got {repetitions}")
    if images.shape[0] == 0:
        raise ConfigurationError("Throughput needs at least one image")

    produce(images[:1])  # warm-up
    sweeps: List[float] = []
    for _ in range(repetitions):
        start = time.perf_counter()
        produce(images)
        sweeps.append(time.perf_counter() - start)

    total = float(sum(sweeps))
    n_maps = images.shape[0] * repetitions
    result = ThroughputMeasurement(
        method=method,
        n_images=int(images.shape[0]),
        repetitions=repetitions,
        total_seconds=total,
        maps_per_second=n_maps / total if total > 0 else float('inf'),
        sweep_seconds_std=float(np.std(sweeps)),
    )
    logger.info(f"{method}: {result.maps_per_second:.1f} maps/s over {repetitions} sweeps of {images.shape[0]} images")
    return result


def run_benchmark(model: AttributorModel, images: torch.Tensor,
                  repetitions: int = MIN_REPETITIONS) -> Dict[str, ThroughputMeasurement]:
    """Throughput of the three map producers on the same images."""
    model.eval()
    scorer = model.encoder

    def ours(batch: torch.Tensor) -> torch.Tensor:
        with torch.no_grad():
            return model(batch)

    return {
        'ours': measure_throughput('ours', ours, images, repetitions),
        'saliency': measure_throughput('saliency', lambda b: saliency(scorer, b), images, repetitions),
        'cam': measure_throughput('cam', lambda b: cam(scorer, b), images, repetitions),
    }
