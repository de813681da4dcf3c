import logging
from pathlib import Path
from typing import Dict, Optional, Union

import pandas as pd
import plotly.graph_objects as go
from plotly.subplots import make_subplots

from bnbcp.evaluation import FitTrace

logger = logging.getLogger(__name__)


def create_trace_chart(traces: Dict[str, FitTrace]):
    """Heldout log-likelihood against wall-clock time and against iteration, one line per run"""
    if not traces:
        return None

    fig = make_subplots(
        rows=2, cols=1,
        subplot_titles=("Heldout log-likelihood vs time", "Heldout log-likelihood vs iteration"),
        vertical_spacing=0.12
    )

    for name, trace in traces.items():
        df = trace.to_frame()
        fig.add_trace(
            go.Scatter(x=df['elapsed_sec'], y=df['heldout_loglik'], name=name,
                       mode='lines+markers', legendgroup=name),
            row=1, col=1
        )
        fig.add_trace(
            go.Scatter(x=df['iter'], y=df['heldout_loglik'], name=name,
                       mode='lines', legendgroup=name, showlegend=False),
            row=2, col=1
        )

    fig.update_xaxes(title_text="Seconds", row=1, col=1)
    fig.update_xaxes(title_text="Iteration", row=2, col=1)
    fig.update_yaxes(title_text="Log-likelihood", row=1, col=1)
    fig.update_yaxes(title_text="Log-likelihood", row=2, col=1)
    fig.update_layout(height=700, showlegend=True, hovermode='x')

    return fig


def create_rank_histogram_chart(histogram: pd.DataFrame, title: Optional[str] = None):
    """Bar chart of a rank_histogram.csv frame (columns rank, count)"""
    if histogram.empty:
        return None

    fig = go.Figure()
    fig.add_trace(
        go.Bar(x=histogram['rank'], y=histogram['count'], name="Samples",
               marker_color='lightblue')
    )
    fig.update_layout(
        title=title or "Effective rank over collected samples",
        xaxis_title="Effective rank",
        yaxis_title="Samples",
        height=400
    )
    return fig


def write_html(fig, output: Union[str, Path]) -> Path:
    """Standalone HTML with plotly.js embedded, so the file opens offline"""
    output = Path(output)
    output.parent.mkdir(parents=True, exist_ok=True)
    fig.write_html(str(output), include_plotlyjs=True, full_html=True)
    logger.info(f"Chart written to {output}")
    return output
