import logging

from pydantic_settings import BaseSettings

TOOL_VERSION = '0.1.0'


class Settings(BaseSettings):
    sqlalchemy_database_url: str = 'sqlite:///./runs.db'
    output_dir: str = './runs'
    log_level: str = 'INFO'
    threads: int = 1
    chunk_size: int = 5000
    cutoff_energy: float = 50.0
    max_depth: float = 50_000.0
    bare_record_depth: float = 1000.0
    psf_bins: int = 128
    psf_r_min: float = 1.0
    psf_r_max: float = 50_000.0
    kernel_pitch: float = 10.0
    kernel_half_width: float = 4000.0
    pec_min_factor: float = 0.5
    pec_max_factor: float = 8.0
    sensitivity_ratio: float = 3.5

    class Config:
        env_file = ".env"
        env_file_encoding = "utf-8"
        env_prefix = "ebl_"
        extra = 'ignore'


settings = Settings()


def configure_logging(level: str | None = None) -> None:
    """
    The configure_logging function sets up the root logger for both entry
    points (command line and HTTP service).

    :param level: Logging level name, defaults to settings.log_level
    :return: None
    """
    logging.basicConfig(
        level=(level or settings.log_level).upper(),
        format='%(asctime)s %(levelname)s %(name)s: %(message)s',
    )
