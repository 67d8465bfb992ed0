//! Shared ask/validate/re-ask loop for the survey elicitations.

use crate::llm_gateway::{ChatRequest, Gateway, GatewayError};

#[derive(Debug, Clone)]
pub(crate) struct Asked<T> {
    pub result: Result<T, String>,
    pub attempts: u32,
    pub last_text: String,
}

/// Sends `req`, validates with `parse`, and on failure re-asks up to
/// `max_reasks` times. Each re-ask carries the bad reply and a repair turn,
/// replacing any earlier repair exchange.
pub(crate) fn ask_with_repair<T, E, P, R>(
    gateway: &Gateway,
    req: &ChatRequest,
    max_reasks: u32,
    parse: P,
    repair: R,
) -> Result<Asked<T>, GatewayError>
where
    E: std::fmt::Display,
    P: Fn(&str) -> Result<T, E>,
    R: Fn(&E) -> String,
{
    let base_turns = req.user_turns.len();
    let base_replies = req.prior_replies.len();
    let mut req = req.clone();
    let mut attempts = 0;
    loop {
        attempts += 1;
        let text = gateway.complete(&req)?.text;
        match parse(&text) {
            Ok(v) => {
                return Ok(Asked {
                    result: Ok(v),
                    attempts,
                    last_text: text,
                })
            }
            Err(e) if attempts > max_reasks => {
                return Ok(Asked {
                    result: Err(e.to_string()),
                    attempts,
                    last_text: text,
                })
            }
            Err(e) => {
                req.user_turns.truncate(base_turns);
                req.prior_replies.truncate(base_replies);
                req.prior_replies.push(text);
                req.user_turns.push(repair(&e));
            }
        }
    }
}
