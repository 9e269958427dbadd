//! Packet-level simulator for comparing TCP congestion handling schemes:
//! DropTail, RED, RED with ECN, and a central controller that marks
//! selected flows through short-lived switch rules.

pub mod controller;
pub mod experiment;
pub mod net;
pub mod scenario;
pub mod sim;
pub mod switch;
pub mod tcp;
