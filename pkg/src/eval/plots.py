"""ROC figures (plotly): HTML always, PNG when the image export engine is available."""

import logging
from pathlib import Path
from typing import Dict, List

import pandas as pd
import plotly.graph_objects as go

from src.utils.errors import PersistenceError

logger = logging.getLogger(__name__)

CONDITION_LABELS = {
    'baseline': 'No inpainting',
    'healthy_inpaint': 'Inpainting in healthy regions',
    'pathological_inpaint': 'Inpainting in pathological regions',
}


def roc_figure(roc: pd.DataFrame, aucs: Dict[str, float]) -> go.Figure:
    """One line per condition of a ``condition, fpr, tpr`` frame."""
    fig = go.Figure()
    for condition, points in roc.groupby('condition', sort=False):
        label = CONDITION_LABELS.get(condition, condition)
        if condition in aucs:
            label = f"{label} (AUC {aucs[condition]:.3f})"
        fig.add_trace(go.Scatter(x=points['fpr'], y=points['tpr'], mode='lines', name=label))
    fig.add_trace(go.Scatter(x=[0, 1], y=[0, 1], mode='lines', name='Chance',
                             line=dict(dash='dash', color='gray')))
    fig.update_layout(
        title='Classifier ROC under inpainting',
        xaxis_title='False positive rate',
        yaxis_title='True positive rate',
        width=640,
        height=560,
        template='plotly_white',
    )
    return fig


def write_figure(fig: go.Figure, stem: Path) -> List[Path]:
    """Write ``<stem>.html`` and, if possible, ``<stem>.png``."""
    stem = Path(stem)
    written = []
    try:
        stem.parent.mkdir(parents=True, exist_ok=True)
        html = stem.with_suffix('.html')
        fig.write_html(str(html), include_plotlyjs='cdn')
        written.append(html)
    except OSError as e:
        raise PersistenceError(f"Could not write {stem}.html: {e}") from e
    try:
        png = stem.with_suffix('.png')
        fig.write_image(str(png))
        written.append(png)
    except Exception as e:  # kaleido missing or broken
        logger.warning(f"PNG export skipped for {stem}: {e}")
    return written
