# File: config.py

import json
import logging
import math
import os
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, PositiveInt, ValidationError, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from utils.errors import ConfigError

config_logger = logging.getLogger(__name__)

ModelTag = Literal["fmbrdf", "lambertian", "oren_nayar", "torrance_sparrow", "lambertian_ts", "pbrdf_flat"]


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
        case_sensitive=False
    )

    # Logging Configuration
    LOG_LEVEL: str = "INFO"
    LOG_TO_FILE: bool = False
    LOG_DIR: str = "logs"
    LOG_FILE_NAME: str = "fmbrdf.log"

    # Microfacet table cache; unset keeps tables in memory only
    FMBRDF_CACHE_DIR: Optional[str] = None
    # Worker cap when --threads is not given
    FMBRDF_THREADS: PositiveInt = 1
    # Default surrogate model file for --mode surrogate
    FMBRDF_SURROGATE_PATH: Optional[str] = None

    # Table and quadrature resolutions used when a run config leaves them out
    SMITH_TABLE_NODES: PositiveInt = 256
    CORRELATION_TABLE_NODES: PositiveInt = 128
    QUADRATURE_N_THETA: PositiveInt = 32
    QUADRATURE_N_PHI: PositiveInt = 64

    @model_validator(mode='after')
    def prepare_cache_dir(self) -> 'Settings':
        """Create the table cache directory if one is configured."""
        if self.FMBRDF_CACHE_DIR:
            try:
                os.makedirs(self.FMBRDF_CACHE_DIR, exist_ok=True)
                config_logger.info(f"Microfacet table cache at {os.path.abspath(self.FMBRDF_CACHE_DIR)}")
            except OSError as e:
                config_logger.error(f"Could not create cache directory {self.FMBRDF_CACHE_DIR}: {e}. Disk cache disabled.")
                self.FMBRDF_CACHE_DIR = None
        return self


# -- run configuration files -------------------------------------------
#
# Angles are degrees in files and radians everywhere else. The roughness
# scale alpha (and the baselines' sigma) is a slope-angle scale given in radians.


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ParamsConfig(_Strict):
    mu: float = Field(1.5, ge=1.0, description="Relative index of refraction")
    ks: float = Field(0.3, ge=0.0, description="Surface albedo")
    rk: float = Field(2.0, ge=0.0, description="Body-to-surface albedo ratio kb/ks")
    alpha: float = Field(0.3, gt=0.0, description="NDF scale (radians)")
    beta: float = Field(2.0, gt=0.0, description="NDF shape; 2 is Gaussian")
    kappa: float = Field(5.0, ge=0.0, description="Facet correlation concentration")

    def to_params(self):
        from models.brdf import FmbrdfParams

        return FmbrdfParams(**self.model_dump())


class BaselineConfig(_Strict):
    albedo: float = Field(0.5, ge=0.0, description="Diffuse albedo (Lambertian, Oren-Nayar, flat pBRDF)")
    sigma: float = Field(0.3, ge=0.0, description="Roughness (radians) for Oren-Nayar and the Gaussian NDF")
    ks: float = Field(0.1, ge=0.0, description="Specular albedo of the microfacet baselines")
    mu: float = Field(1.5, ge=1.0, description="Index of refraction of the microfacet baselines")


class QuadratureConfig(_Strict):
    n_theta: Optional[PositiveInt] = Field(None, description="Polar nodes per hemisphere; default QUADRATURE_N_THETA")
    n_phi: Optional[PositiveInt] = Field(None, description="Azimuth nodes per hemisphere; default QUADRATURE_N_PHI")
    normalization: Literal["table", "discrete"] = Field("table", description="Correlation normalization")

    def rule(self, settings: Optional[Settings] = None) -> Tuple[int, int]:
        return (self.n_theta or (settings.QUADRATURE_N_THETA if settings else 32),
                self.n_phi or (settings.QUADRATURE_N_PHI if settings else 64))


class SceneConfig(_Strict):
    shape: Literal["sphere", "plane"] = Field("sphere", description="Scene geometry")
    width: int = Field(64, ge=8, description="Image width in pixels")
    height: int = Field(64, ge=8, description="Image height in pixels")
    view_theta_deg: float = Field(0.0, ge=0.0, lt=90.0, description="View direction polar angle")
    view_phi_deg: float = Field(0.0, description="View direction azimuth")
    light_theta_deg: float = Field(45.0, ge=0.0, lt=90.0, description="Light direction polar angle")
    light_phi_deg: float = Field(0.0, description="Light direction azimuth")
    irradiance: float = Field(1.0, ge=0.0, description="Light irradiance E0")
    plane_normal_theta_deg: float = Field(0.0, ge=0.0, lt=90.0, description="Plane normal polar angle")
    plane_normal_phi_deg: float = Field(0.0, description="Plane normal azimuth")
    noise_sigma: float = Field(0.0, ge=0.0, description="Gaussian noise on the four filter intensities")
    seed: int = Field(0, description="Noise seed")
    nv_threshold: float = Field(0.1, ge=0.0, lt=1.0, description="Pixels with N.V below this are masked")


class FitConfigModel(_Strict):
    initial: ParamsConfig = Field(
        default_factory=lambda: ParamsConfig(mu=1.5, ks=0.1, rk=1.0, alpha=0.3, beta=2.0, kappa=1.0),
        description="Starting parameters",
    )
    bounds: Dict[Literal["mu", "alpha", "beta", "kappa"], Tuple[float, float]] = Field(
        default_factory=dict, description="Overrides of the default parameter bounds")
    step: float = Field(0.02, gt=0.0, description="Adam step size")
    beta1: float = Field(0.9, ge=0.0, lt=1.0, description="Adam first-moment decay")
    beta2: float = Field(0.999, ge=0.0, lt=1.0, description="Adam second-moment decay")
    eps: float = Field(1e-8, gt=0.0, description="Adam epsilon")
    iterations: int = Field(2000, ge=1, description="Adam iterations per start")
    mode: Literal["oracle", "surrogate"] = Field("oracle", description="Evaluation mode")
    outlier_rule: Literal["mad", "polyfit"] = Field("mad", description="DoLP outlier classification")
    outlier_threshold: float = Field(0.05, gt=0.0, description="Residual threshold of the polyfit rule")
    use_intensity: bool = Field(True, description="Include the intensity term")
    use_polarization: bool = Field(True, description="Include the DoLP term")
    loss_kind: Literal["squared", "huber"] = Field("squared", description="Residual penalty")
    huber_delta: float = Field(0.1, gt=0.0, description="Huber transition point")
    loss_tolerance: float = Field(1e-12, ge=0.0, description="Stop when the loss falls below this")
    rel_tolerance: float = Field(1e-9, ge=0.0, description="Stop when the relative loss change falls below this")
    multi_start: int = Field(1, ge=1, description="Number of starts; extra starts perturb the initial values by up to 20%")
    seed: int = Field(0, description="Seed of the multi-start perturbations")
    novel_light_theta_deg: Optional[float] = Field(None, ge=0.0, lt=90.0, description="Light polar angle for the novel-light check")
    novel_light_phi_deg: float = Field(0.0, description="Light azimuth for the novel-light check")
    reference: Optional[ParamsConfig] = Field(None, description="Known parameters for the novel-light check")

    def to_fit_config(self, quadrature: QuadratureConfig, threads: int = 1, settings: Optional[Settings] = None):
        from services.reflectometry_service import AdamSettings, FitConfig

        return FitConfig(
            initial=self.initial.to_params(),
            bounds={k: tuple(v) for k, v in self.bounds.items()},
            adam=AdamSettings(step=self.step, beta1=self.beta1, beta2=self.beta2, eps=self.eps, iterations=self.iterations),
            mode=self.mode, outlier_rule=self.outlier_rule, outlier_threshold=self.outlier_threshold,
            use_intensity=self.use_intensity, use_polarization=self.use_polarization,
            loss_kind=self.loss_kind, huber_delta=self.huber_delta,
            loss_tolerance=self.loss_tolerance, rel_tolerance=self.rel_tolerance,
            multi_start=self.multi_start, seed=self.seed,
            rule=quadrature.rule(settings), normalization=quadrature.normalization, threads=threads,
        )


class SurrogateTrainingConfig(_Strict):
    n_samples: int = Field(10_000, ge=16, description="Body training samples (Sobol)")
    n_smith_samples: int = Field(4096, ge=16, description="Smith Lambda training samples")
    seed: int = Field(0, description="Sobol scramble and split seed")
    n_theta: PositiveInt = Field(16, description="Oracle polar nodes")
    n_phi: PositiveInt = Field(32, description="Oracle azimuth nodes")
    normalization: Literal["table", "discrete"] = Field("discrete", description="Oracle correlation normalization")
    body_hidden: List[PositiveInt] = Field([64, 64, 64, 64], description="Body network hidden widths")
    smith_hidden: List[PositiveInt] = Field([32, 32], description="Smith network hidden widths")
    epochs: PositiveInt = Field(2000, description="Body network epochs")
    smith_epochs: PositiveInt = Field(1500, description="Smith network epochs")
    batch_size: PositiveInt = Field(1024, description="Minibatch size")
    learning_rate: float = Field(2e-3, gt=0.0, description="Adam learning rate")
    validation_fraction: float = Field(0.1, gt=0.0, lt=1.0, description="Held-out share")
    theta_max_deg: float = Field(85.0, gt=0.0, lt=90.0, description="Largest light/view polar angle")
    alpha: Tuple[float, float] = Field((0.1, 1.2), description="Trained alpha range (radians)")
    beta: Tuple[float, float] = Field((0.6, 4.0), description="Trained beta range")
    kappa: Tuple[float, float] = Field((0.0, 50.0), description="Trained kappa range")
    mu: Tuple[float, float] = Field((1.05, 3.0), description="Trained mu range")
    max_rel_s0: float = Field(0.02, gt=0.0, description="Quality gate on held-out relative s0 error")
    max_abs_dolp: float = Field(0.02, gt=0.0, description="Quality gate on held-out DoLP error")

    @model_validator(mode='after')
    def check_ranges(self) -> 'SurrogateTrainingConfig':
        for name in ("alpha", "beta", "kappa", "mu"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"empty {name} range [{lo}, {hi}]")
        return self

    def to_training_config(self, threads: int = 1):
        from surrogate.model import DomainBox
        from surrogate.training import TrainingConfig

        domain = DomainBox(theta_max=math.radians(self.theta_max_deg), alpha=tuple(self.alpha), beta=tuple(self.beta),
                           kappa=tuple(self.kappa), mu=tuple(self.mu))
        return TrainingConfig(
            n_samples=self.n_samples, n_smith_samples=self.n_smith_samples, seed=self.seed,
            rule=(self.n_theta, self.n_phi), normalization=self.normalization,
            body_hidden=tuple(self.body_hidden), smith_hidden=tuple(self.smith_hidden),
            epochs=self.epochs, smith_epochs=self.smith_epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, validation_fraction=self.validation_fraction,
            threads=threads, domain=domain,
        )


class CurvesConfig(_Strict):
    models: List[ModelTag] = Field(["fmbrdf", "lambertian", "oren_nayar", "lambertian_ts", "pbrdf_flat"],
                                   description="Models whose curves are emitted")
    sweep_start_deg: float = Field(-80.0, gt=-90.0, lt=90.0, description="First planar-sweep camera angle")
    sweep_stop_deg: float = Field(80.0, gt=-90.0, lt=90.0, description="Last planar-sweep camera angle")
    sweep_step_deg: float = Field(5.0, gt=0.0, description="Planar-sweep step")
    sweep_light_deg: float = Field(45.0, gt=-90.0, lt=90.0, description="Planar-sweep light angle")

    def sweep_angles(self) -> List[float]:
        count = int(math.floor((self.sweep_stop_deg - self.sweep_start_deg) / self.sweep_step_deg + 1e-9)) + 1
        return [self.sweep_start_deg + k * self.sweep_step_deg for k in range(max(count, 1))]


class RunConfig(_Strict):
    version: Literal[1] = Field(1, description="Config schema version")
    model: ModelTag = Field("fmbrdf", description="Reflectance model tag")
    params: ParamsConfig = Field(default_factory=ParamsConfig, description="FMBRDF parameters")
    baseline: BaselineConfig = Field(default_factory=BaselineConfig, description="Baseline model parameters")
    scene: SceneConfig = Field(default_factory=SceneConfig, description="Scene and camera")
    quadrature: QuadratureConfig = Field(default_factory=QuadratureConfig, description="Hemisphere rule")
    fit: FitConfigModel = Field(default_factory=FitConfigModel, description="Parameter estimation")
    surrogate: SurrogateTrainingConfig = Field(default_factory=SurrogateTrainingConfig, description="Surrogate training")
    curves: CurvesConfig = Field(default_factory=CurvesConfig, description="Evaluation curves")

    def baseline_params(self, model: Optional[str] = None):
        from models.baselines import BaselineParams

        tag = model or self.model
        if tag == "fmbrdf":
            return None
        return BaselineParams(variant=tag, **self.baseline.model_dump())

    def scene_spec(self, model: Optional[str] = None, settings: Optional[Settings] = None):
        from models.brdf import LightSource
        from optics.geometry import Direction
        from services.scene_service import SceneSpec

        s = self.scene
        tag = model or self.model
        view = Direction.from_angles(math.radians(s.view_theta_deg), math.radians(s.view_phi_deg))
        light = Direction.from_angles(math.radians(s.light_theta_deg), math.radians(s.light_phi_deg))
        plane = Direction.from_angles(math.radians(s.plane_normal_theta_deg), math.radians(s.plane_normal_phi_deg))
        return SceneSpec(
            shape=s.shape, width=s.width, height=s.height, V=view, light=LightSource(light, s.irradiance),
            model=tag, params=self.params.to_params(), baseline=self.baseline_params(tag),
            noise_sigma=s.noise_sigma, seed=s.seed, nv_threshold=s.nv_threshold, plane_normal=plane,
            rule=self.quadrature.rule(settings), normalization=self.quadrature.normalization,
        )


def load_run_config(path: Optional[str]) -> RunConfig:
    """Parse and validate a run config; ``None`` yields all documented defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    try:
        return RunConfig.model_validate(payload)
    except ValidationError as e:
        raise ConfigError(f"invalid config {path}: {e}") from e


try:
    settings = Settings()
except Exception as e:
    config_logger.critical(f"CRITICAL: Failed to load application settings. Error: {e}", exc_info=True)
    print(f"CRITICAL: Failed to load application settings. Error: {e}\nCheck your .env file and configurations.")
    raise SystemExit(f"Configuration load failed: {e}")
