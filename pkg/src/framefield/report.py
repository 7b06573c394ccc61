import json
from dataclasses import asdict, dataclass, field

REPORT_SCHEMA = "framefield.report/1"


@dataclass
class FieldReport:
    """Summary of one optimization run.

    ``wall_time`` is kept in memory only; it is left out of :meth:`to_json`
    so report files stay byte-identical between runs.
    """

    dimension: int
    energy: float = 0.0
    curvature: float = 0.0
    energy_trace: list = field(default_factory=list)
    boundary_deviation_avg: float = 0.0
    boundary_deviation_max: float = 0.0
    n_singular: int = 0
    solver: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def to_dict(self):
        d = {
            "schema": REPORT_SCHEMA,
            "dimension": self.dimension,
            "energy": self.energy,
            "curvature": self.curvature,
            "energy_trace": list(self.energy_trace),
            "boundary_deviation": {"avg": self.boundary_deviation_avg,
                                   "max": self.boundary_deviation_max},
            "n_singular": self.n_singular,
            "solver": [asdict(s) for s in self.solver],
        }
        d.update(self.extra)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"
