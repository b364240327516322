from src.utils.config import Settings


def test_settings_read_prefixed_environment(monkeypatch) -> None:
    monkeypatch.setenv("NLAB_THREADS", "3")
    monkeypatch.setenv("NLAB_LOG_JSON", "true")
    monkeypatch.setenv("THREADS", "9")
    current = Settings(_env_file=None)
    assert current.THREADS == 3
    assert current.LOG_JSON is True


def test_settings_defaults(monkeypatch) -> None:
    for name in ("NLAB_THREADS", "NLAB_LOG_LEVEL", "NLAB_LOG_JSON", "NLAB_OUTPUT_DIR"):
        monkeypatch.delenv(name, raising=False)
    current = Settings(_env_file=None)
    assert current.THREADS == 1
    assert current.LOG_LEVEL == "INFO"
    assert current.OUTPUT_DIR == "runs"
