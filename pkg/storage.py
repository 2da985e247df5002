import logging
from pathlib import Path
from typing import List, Optional

import pandas as pd

from decomp import DecompLayout
from grid import GridFunction
from images import flow_to_color, save_image
from models import EnergyTrace

logger = logging.getLogger(__name__)


class ArtifactStore:
    """Writes run artifacts and remembers every path it produced"""

    def __init__(self, root: Optional[Path] = None):
        self.root = Path(root) if root is not None else None
        self.written: List[Path] = []

    def _target(self, path) -> Path:
        path = Path(path)
        if self.root is not None and not path.is_absolute():
            path = self.root / path
        path.parent.mkdir(parents=True, exist_ok=True)
        return path

    def _record(self, path: Path) -> Path:
        self.written.append(path)
        logger.info("wrote %s", path)
        return path

    # Images
    def save_image(self, u: GridFunction, path) -> Path:
        """Write a greyscale image"""
        try:
            path = self._target(path)
            save_image(u, path)
            return self._record(path)
        except Exception as e:
            logger.error(f"Error saving image {path}: {e}")
            raise

    def save_flow_color(self, flow: GridFunction, path) -> Path:
        """Write the color-coded flow field"""
        try:
            path = self._target(path)
            flow_to_color(flow).save(path)
            return self._record(path)
        except Exception as e:
            logger.error(f"Error saving flow image {path}: {e}")
            raise

    # CSV artifacts
    def save_trace(self, trace: EnergyTrace, path) -> Path:
        """Write `k,energy` rows"""
        try:
            path = self._target(path)
            trace.to_csv(path)
            return self._record(path)
        except Exception as e:
            logger.error(f"Error saving energy trace {path}: {e}")
            raise

    def save_comparison(self, traces: dict, path) -> Path:
        """Write `k,glob_energy,ddseq_energy,ddpar_energy` joined on k"""
        try:
            path = self._target(path)
            frame = None
            for column in ("glob_energy", "ddseq_energy", "ddpar_energy"):
                part = traces[column].to_frame().rename(columns={"energy": column})
                frame = part if frame is None else frame.merge(part, on="k", how="outer")
            frame.sort_values("k").to_csv(path, index=False, float_format="%.17g")
            return self._record(path)
        except Exception as e:
            logger.error(f"Error saving energy comparison {path}: {e}")
            raise

    def save_flow(self, flow: GridFunction, path) -> Path:
        """Write `x1,x2,u1,u2` rows with 1-based lattice coordinates"""
        try:
            path = self._target(path)
            coords = flow.domain.coordinates()
            values = flow.values.reshape(-1, flow.channels)
            frame = pd.DataFrame({
                "x1": coords[:, 0],
                "x2": coords[:, 1],
                "u1": values[:, 0],
                "u2": values[:, 1],
            })
            frame.to_csv(path, index=False, float_format="%.17g")
            return self._record(path)
        except Exception as e:
            logger.error(f"Error saving flow field {path}: {e}")
            raise

    def save_layout(self, layout: DecompLayout, path) -> Path:
        """Write `x1,x2,subdomain,color,theta` rows for every positive weight"""
        try:
            path = self._target(path)
            coords = layout.domain.coordinates()
            rows = []
            for i in range(layout.size):
                theta = layout.theta(i).ravel()
                keep = theta > 0
                part = pd.DataFrame(coords[keep], columns=[f"x{k + 1}" for k in range(layout.domain.dims)])
                part["subdomain"] = i + 1
                part["color"] = layout.colors[i]
                part["theta"] = theta[keep]
                rows.append(part)
            pd.concat(rows, ignore_index=True).to_csv(path, index=False, float_format="%.17g")
            return self._record(path)
        except Exception as e:
            logger.error(f"Error saving layout {path}: {e}")
            raise
