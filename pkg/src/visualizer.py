"""
Plots of training curves and field probes.
"""

import matplotlib
matplotlib.use('Agg')  # Use non-interactive backend
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402
from typing import Optional  # noqa: E402

from src.losses import TERMS  # noqa: E402


class Visualizer:
    """Create figures for training runs and reconstructed fields."""

    def __init__(self, dpi: int = 150):
        """
        Initialize visualizer.

        Args:
            dpi: Resolution of saved figures
        """
        self.dpi = dpi
        plt.style.use('default')

    def _save(self, fig, save_path: Optional[str]):
        if save_path:
            fig.savefig(save_path, dpi=self.dpi, bbox_inches='tight')
        plt.close(fig)

    def plot_loss_history(
        self,
        log: pd.DataFrame,
        save_path: Optional[str] = None
    ):
        """
        Plot every raw loss term and the weighted total against iteration.

        Args:
            log: Training log with 'iteration', 'raw_<term>' and 'total'
            save_path: Path to save the plot
        """
        fig, ax = plt.subplots(figsize=(10, 6))

        for term in TERMS:
            column = f'raw_{term}'
            if column not in log or not (log[column] > 0).any():
                continue
            ax.plot(log['iteration'], log[column], label=term, alpha=0.8)
        ax.plot(log['iteration'], log['total'], color='black',
                linewidth=2, label='total (weighted)')

        ax.set_yscale('log')
        ax.set_xlabel('Iteration', fontsize=12)
        ax.set_ylabel('Loss', fontsize=12)
        ax.set_title('Training Loss', fontsize=14, fontweight='bold')
        ax.legend(ncol=3, fontsize=9)
        ax.grid(True, alpha=0.3)

        self._save(fig, save_path)

    def plot_probe(
        self,
        probe: pd.DataFrame,
        save_path: Optional[str] = None,
        label: str = 'phi'
    ):
        """
        Plot field values along a 1D probe.

        Args:
            probe: DataFrame with columns 't' and 'value'
            save_path: Path to save the plot
            label: Name of the plotted field
        """
        fig, ax = plt.subplots(figsize=(8, 4))

        ax.plot(probe['t'], probe['value'], color='tab:blue')
        ax.axhline(0.0, color='black', linestyle='--', linewidth=1)
        crossings = np.flatnonzero(
            np.sign(probe['value'].to_numpy()[1:]) !=
            np.sign(probe['value'].to_numpy()[:-1])
        )
        for i in crossings:
            ax.axvline(probe['t'].iloc[i], color='red', alpha=0.3)

        ax.set_xlabel('Position along probe', fontsize=12)
        ax.set_ylabel(label, fontsize=12)
        ax.set_title(f'{label} along probe', fontsize=14, fontweight='bold')
        ax.grid(True, alpha=0.3)

        self._save(fig, save_path)
