import logging
import os
import time
import uuid
from datetime import datetime, timezone


class ObservabilityManager:
    """
    Pipeline observability for NoteFlow.
    Features: Structured logging, Trace Correlation, and Stage Benchmarking.
    """
    def __init__(self, name="noteflow", level=None):
        level = level or os.getenv("NOTEFLOW_LOG_LEVEL", "INFO")

        # 1. Optional Cloud Logging sink, local logging otherwise
        if os.getenv("NOTEFLOW_CLOUD_LOGGING", "0") == "1":
            try:
                from google.cloud import logging as cloud_logging

                self.cloud_client = cloud_logging.Client()
                # Routes the standard logging tree into Cloud Logging
                self.cloud_client.setup_logging()
            except Exception:
                logging.basicConfig(level=level)
        else:
            logging.basicConfig(level=level)

        self.logger = logging.getLogger(name)
        self.logger.setLevel(level)
        self.stage_count = {}
        self.trace_steps = []
        self.current_trace_id = None

    def start_request(self):
        """Initializes a new command context with a unique ID."""
        self.current_trace_id = str(uuid.uuid4())
        self.clear_trace()
        return self.current_trace_id

    # --- Structured Logging ---
    def info(self, msg, extra=None):
        payload = {"message": msg, "trace_id": self.current_trace_id}
        if extra:
            payload.update(extra)
        self.logger.info(payload)

    def warning(self, msg, extra=None):
        payload = {"message": msg, "trace_id": self.current_trace_id, "status": "WARNING"}
        if extra:
            payload.update(extra)
        self.logger.warning(payload)

    def error(self, msg, extra=None):
        payload = {"message": msg, "trace_id": self.current_trace_id, "status": "ERROR"}
        if extra:
            payload.update(extra)
        self.logger.error(payload)

    # --- Performance Logic ---
    def start_timer(self):
        return time.perf_counter()

    def stop_timer(self, start_time):
        return round(time.perf_counter() - start_time, 3)

    # --- Tracer Logic ---
    def add_trace(self, stage, action, **details):
        """Adds a pipeline stage to the audit trail of the current command."""
        step = {
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "trace_id": self.current_trace_id,
            "stage": stage,
            "action": action,
        }
        step.update(details)
        self.trace_steps.append(step)
        self.stage_count[stage] = self.stage_count.get(stage, 0) + 1
        self.info(f"Trace Event: {stage}", extra={"step": step})

    def clear_trace(self):
        self.trace_steps = []
        self.stage_count = {}

    def get_full_trace(self):
        return self.trace_steps
