use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender, SyncSender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use crisis_core::cloud::Broker;
use crisis_core::scenario::{ChoiceRequest, DecisionMode, Driver, RunLog, ScenarioError, ScenarioScript, Step};

/// Pace of the simulated clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Speed {
    Max,
    /// Simulated milliseconds per wall millisecond.
    RealTimeScale(f64),
}

impl std::str::FromStr for Speed {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("max") {
            return Ok(Speed::Max);
        }
        match s.trim_end_matches('x').parse::<f64>() {
            Ok(f) if f > 0.0 && f.is_finite() => Ok(Speed::RealTimeScale(f)),
            _ => Err(format!("speed must be `max` or a positive factor, got {s:?}")),
        }
    }
}

struct ChoiceMsg {
    request: ChoiceRequest,
    reply: SyncSender<Result<u64, ScenarioError>>,
}

/// Handle on a driver running in its own thread. Reads go through a shared
/// lock; choices go through a queue the driver drains between steps.
#[derive(Clone)]
pub struct Engine {
    driver: Arc<Mutex<Driver>>,
    broker: Arc<Broker>,
    script: Arc<ScenarioScript>,
    choices: Sender<ChoiceMsg>,
    start: Sender<()>,
}

pub struct EngineThread {
    handle: JoinHandle<Result<RunLog, ScenarioError>>,
}

impl EngineThread {
    /// Waits for the run to end and returns its log.
    pub fn join(self) -> Result<RunLog, ScenarioError> {
        self.handle.join().unwrap_or(Err(ScenarioError::AbortedByOperator))
    }

    pub fn is_finished(&self) -> bool {
        self.handle.is_finished()
    }
}

fn lock(driver: &Mutex<Driver>) -> MutexGuard<'_, Driver> {
    driver.lock().unwrap_or_else(|e| e.into_inner())
}

impl Engine {
    /// Prepares a run. The clock does not move until [`Engine::start`].
    pub fn new(script: ScenarioScript, mode: DecisionMode, speed: Speed) -> Result<(Engine, EngineThread), ScenarioError> {
        let driver = Driver::new(script.clone(), mode)?;
        let broker = Arc::clone(driver.broker());
        let driver = Arc::new(Mutex::new(driver));
        let (choices, rx) = mpsc::channel();
        let (start, started) = mpsc::channel();
        let shared = Arc::clone(&driver);
        let handle = std::thread::Builder::new()
            .name("scenario-driver".into())
            .spawn(move || drive(&shared, &rx, &started, speed))
            .expect("spawn driver thread");
        let engine = Engine { driver, broker, script: Arc::new(script), choices, start };
        Ok((engine, EngineThread { handle }))
    }

    pub fn start(&self) {
        let _ = self.start.send(());
    }

    pub fn broker(&self) -> &Arc<Broker> {
        &self.broker
    }

    pub fn script(&self) -> &ScenarioScript {
        &self.script
    }

    /// Read access to the driver state.
    pub fn with_driver<T>(&self, f: impl FnOnce(&Driver) -> T) -> T {
        f(&lock(&self.driver))
    }

    /// Queues a choice and blocks until the driver has applied or rejected it.
    pub fn submit(&self, request: ChoiceRequest) -> Result<u64, ScenarioError> {
        let (reply, answer) = mpsc::sync_channel(1);
        self.choices.send(ChoiceMsg { request, reply }).map_err(|_| ScenarioError::Finished)?;
        answer.recv().unwrap_or(Err(ScenarioError::Finished))
    }
}

fn drive(
    driver: &Mutex<Driver>,
    choices: &Receiver<ChoiceMsg>,
    started: &Receiver<()>,
    speed: Speed,
) -> Result<RunLog, ScenarioError> {
    if started.recv().is_err() {
        return Err(ScenarioError::AbortedByOperator);
    }
    let tick = lock(driver).script().tick.ms();
    loop {
        while let Ok(msg) = choices.try_recv() {
            let _ = msg.reply.send(lock(driver).submit_choice(&msg.request));
        }
        let step = lock(driver).step()?;
        match step {
            Step::Ticked(_) => {
                if let Speed::RealTimeScale(f) = speed {
                    std::thread::sleep(Duration::from_secs_f64(tick as f64 / f / 1000.0));
                }
            }
            Step::AwaitingDecision => match choices.recv_timeout(Duration::from_millis(200)) {
                Ok(msg) => {
                    let _ = msg.reply.send(lock(driver).submit_choice(&msg.request));
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => return Err(ScenarioError::AbortedByOperator),
            },
            Step::Finished => break,
        }
    }
    let log = lock(driver).log();
    Ok(log)
}
