pub mod agent;
pub mod cli;
pub mod enforcement;
pub mod federation;
pub mod guest;
pub mod ids;
pub mod sim;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/federation.md")]
    struct Federation;
    #[doc = include_str!("../../../book/src/guest-language.md")]
    struct GuestLanguage;
    #[doc = include_str!("../../../book/src/enforcement.md")]
    struct Enforcement;
    #[doc = include_str!("../../../book/src/agents.md")]
    struct Agents;
    #[doc = include_str!("../../../book/src/simulation.md")]
    struct Simulation;
}
