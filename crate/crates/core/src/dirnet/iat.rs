use super::{
    class, DirnetError, DirnetEvent, DirnetKind, DirnetMessage, Effect, IafPort, NodeRole, Payload,
};
use crate::manager::TomHandle;
use crate::timeout::{ActionDescriptor, Timeout, TimeoutId};
use crate::types::{NodeId, Tick};

/// The I'm-Alive task of one node.
///
/// Every `d_IA_CLR` ticks it tests and clears the IAF. A flag still FALSE
/// means the local DIR-x stopped raising it: the IAT broadcasts m_TEIF and
/// stops checking until a WAKEUP tells it to respawn the DIR-x.
#[derive(Debug)]
pub struct Iat {
    node: NodeId,
    iaf: IafPort,
    t_ia_clr: Timeout<DirnetKind>,
    /// Set between an m_TEIF broadcast and the WAKEUP that answers it.
    teif_sent: bool,
    tom: TomHandle<DirnetKind>,
}

impl Iat {
    pub fn new(
        node: NodeId,
        d_ia_clr: Tick,
        iaf: IafPort,
        tom: TomHandle<DirnetKind>,
    ) -> Result<Self, DirnetError> {
        let t_ia_clr = Timeout::declare(
            TimeoutId::new(class::IA_CLR, node.0),
            true,
            true,
            d_ia_clr,
            ActionDescriptor::new(DirnetKind::IaClrAlarm, node),
        )?;
        tom.insert(&t_ia_clr)?;
        Ok(Self {
            node,
            iaf,
            t_ia_clr,
            teif_sent: false,
            tom,
        })
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn teif_sent(&self) -> bool {
        self.teif_sent
    }

    pub fn tom(&self) -> &TomHandle<DirnetKind> {
        &self.tom
    }

    pub fn step(&mut self, m: &DirnetMessage) -> Result<Vec<Effect>, DirnetError> {
        let mut out = Vec::new();
        match m.kind {
            DirnetKind::IaClrAlarm => {
                if !self.iaf.test_and_clear() {
                    out.push(Effect::Broadcast(
                        DirnetMessage::new(DirnetKind::Teif, self.node).about(self.node),
                    ));
                    out.push(Effect::record(DirnetEvent::TeifSent, self.node));
                    self.tom.delete(self.t_ia_clr.id())?;
                    self.teif_sent = true;
                }
            }
            DirnetKind::Wakeup if self.teif_sent => {
                let Payload::Role(role) = m.payload else {
                    log::warn!("node {}: WAKEUP without a role", self.node);
                    return Ok(out);
                };
                self.teif_sent = false;
                let mid = if role == NodeRole::Manager { self.node } else { m.sender };
                out.push(Effect::Respawn { role, mid });
                out.push(Effect::record(DirnetEvent::Respawned, self.node));
                self.tom.renew(&self.t_ia_clr)?;
            }
            DirnetKind::Wakeup => {
                log::debug!("node {}: WAKEUP from {} with a live DIR-x", self.node, m.sender);
            }
            other => log::debug!("node {}: IAT ignores {other:?}", self.node),
        }
        Ok(out)
    }
}
