from .broker import Broker, DEFAULT_BUS_PORT, topic_matches
from .client import BusConnectionError, EventPublisher, EventSubscriber, parse_bus_address
from .frames import MonitoringEvent, ProtocolViolation

__all__ = [
    "Broker",
    "DEFAULT_BUS_PORT",
    "topic_matches",
    "BusConnectionError",
    "EventPublisher",
    "EventSubscriber",
    "parse_bus_address",
    "MonitoringEvent",
    "ProtocolViolation",
]
