//! Monte-Carlo check of the seller and buyer incentives.
//!
//! Each trial runs a complete transaction through the real ledger, protocol
//! and automatic adjudication code: a seller of accuracy `p` answers a
//! yes/no question whose true answer is "yes", the buyer attests the truth
//! (or skips verification when it costs at least the deposit), and the
//! transaction is settled. Per-trial results are reduced with integer sums,
//! so the report is identical whether trials run sequentially or in
//! parallel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adjudication::{AdjudicationPolicy, Attestation, DecisionStore};
use crate::answer_spec::AnswerSpec;
use crate::ledger::{AccountKind, Ledger, Money, TxnId};
use crate::protocol::{Participant, Terms, Timestamp, Transaction};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("probability {0} is outside [0, 1]")]
    InvalidProbability(f64),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SellerStrategy {
    pub accuracy: f64,
}

impl SellerStrategy {
    pub fn new(accuracy: f64) -> Result<Self, SimError> {
        check_probability(accuracy)?;
        Ok(SellerStrategy { accuracy })
    }

    /// A seller answers only when the expected payoff is positive.
    pub fn participates(&self, terms: &Terms) -> bool {
        seller_expected_payoff(self.accuracy, terms).is_ok_and(|v| v > 0.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuyerStrategy {
    pub evidence_cost: Money,
}

impl BuyerStrategy {
    pub fn verifies(&self, terms: &Terms) -> bool {
        buyer_should_verify(self, terms)
    }
}

fn check_probability(p: f64) -> Result<(), SimError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SimError::InvalidProbability(p))
    }
}

/// `p·P − (1−p)·S − fee_A`, assuming the buyer verifies.
pub fn seller_expected_payoff(p: f64, terms: &Terms) -> Result<f64, SimError> {
    check_probability(p)?;
    let (price, stake, fee) = (terms.price.0 as f64, terms.stake.0 as f64, terms.fee_a.0 as f64);
    Ok(p * price - (1.0 - p) * stake - fee)
}

/// Accuracy at which the seller's expected payoff is zero: `(S + fee_A) / (P + S)`.
pub fn break_even_accuracy(terms: &Terms) -> f64 {
    (terms.stake.0 + terms.fee_a.0) as f64 / (terms.price.0 + terms.stake.0) as f64
}

/// Verifying costs `c` and recovers `D`; ties go to not verifying.
pub fn buyer_should_verify(strategy: &BuyerStrategy, terms: &Terms) -> bool {
    strategy.evidence_cost < terms.deposit
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub terms: Terms,
    pub grid: Vec<f64>,
    pub buyer: BuyerStrategy,
    pub trials: u64,
    pub seed: u64,
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.terms.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        if self.grid.is_empty() {
            return Err(SimError::InvalidConfig("grid is empty".into()));
        }
        for &p in &self.grid {
            check_probability(p)?;
        }
        if self.trials == 0 {
            return Err(SimError::InvalidConfig("trials must be positive".into()));
        }
        Ok(())
    }
}

/// How trials are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPointReport {
    pub accuracy: f64,
    pub trials: u64,
    pub correct_answers: u64,
    pub seller_participates: bool,
    pub expected_seller_payoff: f64,
    pub mean_seller_payoff: f64,
    pub seller_payoff_std_error: f64,
    pub mean_buyer_outflow: f64,
    /// Ledger outflow plus the out-of-band evidence cost when verifying.
    pub mean_buyer_cost: f64,
    pub exchange_revenue: u64,
    pub exchange_revenue_per_transaction: f64,
    pub sink_absorption: u64,
    pub mean_sink_absorption: f64,
    pub seller_payoff_sum: i128,
    pub seller_payoff_sq_sum: i128,
    pub buyer_outflow_sum: i128,
    pub fee_deviations: u64,
    pub conservation_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub terms: Terms,
    pub seed: u64,
    pub trials_per_point: u64,
    pub buyer_verifies: bool,
    pub points: Vec<GridPointReport>,
    pub break_even_closed_form: f64,
    pub break_even_estimate: Option<f64>,
    pub total_issued: u64,
    pub total_final_balances: u64,
    pub conservation_violations: u64,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Result of one simulated transaction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
struct Tally {
    trials: u64,
    correct: u64,
    seller_sum: i128,
    seller_sq: i128,
    buyer_sum: i128,
    exchange: u64,
    sink: u64,
    issued: u64,
    final_balances: u64,
    fee_deviations: u64,
    violations: u64,
}

impl Tally {
    fn merge(self, o: Tally) -> Tally {
        Tally {
            trials: self.trials + o.trials,
            correct: self.correct + o.correct,
            seller_sum: self.seller_sum + o.seller_sum,
            seller_sq: self.seller_sq + o.seller_sq,
            buyer_sum: self.buyer_sum + o.buyer_sum,
            exchange: self.exchange + o.exchange,
            sink: self.sink + o.sink,
            issued: self.issued + o.issued,
            final_balances: self.final_balances + o.final_balances,
            fee_deviations: self.fee_deviations + o.fee_deviations,
            violations: self.violations + o.violations,
        }
    }
}

/// Fixed inputs shared by every trial.
struct TrialSetup {
    terms: Terms,
    spec: AnswerSpec,
    attestation: Vec<u8>,
    verifies: bool,
}

impl TrialSetup {
    fn new(terms: Terms, verifies: bool) -> Self {
        TrialSetup {
            terms,
            spec: AnswerSpec::enumerated(["yes", "no"]),
            attestation: Attestation::new("yes", "observed outcome").to_bytes(),
            verifies,
        }
    }

    fn run(&self, correct: bool) -> Tally {
        let t = &self.terms;
        let mut ledger = Ledger::with_house_accounts();
        let fee = ledger.exchange_fee_account().expect("house accounts");
        let sink = ledger.sink_account().expect("house accounts");
        let b = ledger.open_account(AccountKind::Buyer, None).expect("open");
        let s = ledger.open_account(AccountKind::Seller, None).expect("open");
        let buyer_funds = t.buyer_commitment().expect("validated terms");
        let seller_funds = t.seller_commitment().expect("validated terms");
        ledger.fund(b, buyer_funds).expect("fund");
        ledger.fund(s, seller_funds).expect("fund");

        let mut txn = Transaction::create(
            &mut ledger,
            TxnId(1),
            Participant::new("q", b),
            "does it hold?",
            self.spec.clone(),
            *t,
            AdjudicationPolicy::default(),
        )
        .expect("validated terms");
        let start = Timestamp(0);
        txn.post(&mut ledger).expect("buyer funded");
        txn.accept(&mut ledger, Participant::new("a", s), start).expect("seller funded");
        txn.submit_answer("a", if correct { "yes" } else { "no" }, start).expect("accepted");
        if self.verifies {
            txn.submit_evidence("q", self.attestation.clone(), start).expect("answered");
            DecisionStore::new().adjudicate_auto(&mut txn, start).expect("evidence submitted");
        } else {
            txn.advance_time(t.evidence_deadline.plus(1));
        }
        txn.settle(&mut ledger).expect("settleable");

        let bal = |a| ledger.balance_of(a).expect("known account").0;
        let seller_net = bal(s) as i128 - seller_funds.0 as i128;
        let buyer_out = buyer_funds.0 as i128 - bal(b) as i128;
        let exchange = bal(fee);
        let conserved = ledger.total_supply() == ledger.total_issued() && bal(txn.escrow_account) == 0;
        Tally {
            trials: 1,
            correct: correct as u64,
            seller_sum: seller_net,
            seller_sq: seller_net * seller_net,
            buyer_sum: buyer_out,
            exchange,
            sink: bal(sink),
            issued: ledger.total_issued().0,
            final_balances: ledger.total_supply().0,
            fee_deviations: (exchange != t.fee_q.0 + t.fee_a.0) as u64,
            violations: (!conserved) as u64,
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for one trial, derived from the run seed and the trial's position.
fn trial_seed(seed: u64, point: usize, trial: u64) -> u64 {
    splitmix(splitmix(seed ^ splitmix(point as u64)) ^ trial)
}

fn simulate_point(setup: &TrialSetup, accuracy: f64, seed: u64, point: usize, trials: u64, exec: Execution) -> Tally {
    let one = |i: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(seed, point, i));
        setup.run(rng.random::<f64>() < accuracy)
    };
    match exec {
        Execution::Sequential => (0..trials).map(one).fold(Tally::default(), Tally::merge),
        #[cfg(feature = "parallel")]
        Execution::Parallel => {
            use rayon::prelude::*;
            (0..trials).into_par_iter().map(one).reduce(Tally::default, Tally::merge)
        }
    }
}

pub fn run_simulation(config: &SimConfig) -> Result<SimReport, SimError> {
    run_simulation_with(config, Execution::default())
}

pub fn run_simulation_with(config: &SimConfig, exec: Execution) -> Result<SimReport, SimError> {
    config.validate()?;
    let terms = config.terms;
    let verifies = buyer_should_verify(&config.buyer, &terms);
    let setup = TrialSetup::new(terms, verifies);
    let evidence_cost = if verifies { config.buyer.evidence_cost.0 as f64 } else { 0.0 };

    let mut points = Vec::with_capacity(config.grid.len());
    let mut total = Tally::default();
    for (i, &p) in config.grid.iter().enumerate() {
        let tally = simulate_point(&setup, p, config.seed, i, config.trials, exec);
        total = total.merge(tally);
        let n = tally.trials as f64;
        let mean = tally.seller_sum as f64 / n;
        let variance = if tally.trials > 1 {
            // exact integer numerator: n·Σx² − (Σx)²
            let num = tally.trials as i128 * tally.seller_sq - tally.seller_sum * tally.seller_sum;
            num as f64 / (n * (n - 1.0))
        } else {
            0.0
        };
        let mean_outflow = tally.buyer_sum as f64 / n;
        points.push(GridPointReport {
            accuracy: p,
            trials: tally.trials,
            correct_answers: tally.correct,
            seller_participates: SellerStrategy { accuracy: p }.participates(&terms),
            expected_seller_payoff: seller_expected_payoff(p, &terms)?,
            mean_seller_payoff: mean,
            seller_payoff_std_error: (variance / n).sqrt(),
            mean_buyer_outflow: mean_outflow,
            mean_buyer_cost: mean_outflow + evidence_cost,
            exchange_revenue: tally.exchange,
            exchange_revenue_per_transaction: tally.exchange as f64 / n,
            sink_absorption: tally.sink,
            mean_sink_absorption: tally.sink as f64 / n,
            seller_payoff_sum: tally.seller_sum,
            seller_payoff_sq_sum: tally.seller_sq,
            buyer_outflow_sum: tally.buyer_sum,
            fee_deviations: tally.fee_deviations,
            conservation_violations: tally.violations,
        });
    }
    let break_even_estimate = estimate_break_even(&points);
    Ok(SimReport {
        terms,
        seed: config.seed,
        trials_per_point: config.trials,
        buyer_verifies: verifies,
        points,
        break_even_closed_form: break_even_accuracy(&terms),
        break_even_estimate,
        total_issued: total.issued,
        total_final_balances: total.final_balances,
        conservation_violations: total.violations,
    })
}

/// Linear interpolation at the first sign change of the empirical payoff.
fn estimate_break_even(points: &[GridPointReport]) -> Option<f64> {
    let mut sorted: Vec<(f64, f64)> = points.iter().map(|p| (p.accuracy, p.mean_seller_payoff)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    sorted.windows(2).find_map(|w| {
        let ((p0, m0), (p1, m1)) = (w[0], w[1]);
        if m0 == 0.0 {
            Some(p0)
        } else if m0 < 0.0 && m1 >= 0.0 && p1 > p0 {
            Some(p0 + (0.0 - m0) * (p1 - p0) / (m1 - m0))
        } else {
            None
        }
    })
}
