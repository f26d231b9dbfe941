//! Interest propagation, gradient setup, data relaying with duplicate
//! suppression, reinforcement, and the tree and flooding report paths.

use super::mac::LinkDest;
use super::packet::{DataMessage, DataRoute, Interest, NodeHealth, Packet, Reinforcement};
use super::{CachedInterest, GradientEntry, NodeState, StackAction, StackError};
use crate::environment::SensorReading;
use crate::kernel::SimTime;

fn unicast(to: u32, packet: Packet) -> StackAction {
    StackAction::Transmit {
        dest: LinkDest::Unicast(to),
        packet,
    }
}

impl NodeState {
    /// Sink side: records `interest` as issued here and floods it.
    pub fn issue_interest(&mut self, interest: Interest) -> StackAction {
        self.issued.insert(interest.interest_id, interest.clone());
        StackAction::Transmit {
            dest: LinkDest::Broadcast,
            packet: Packet::Interest(interest),
        }
    }

    /// Handles an interest heard from neighbour `from`.
    pub fn propagate_interest(&mut self, interest: &Interest, from: u32, now: SimTime) -> Vec<StackAction> {
        if interest.hop_limit == 0 {
            self.counters.hop_limit_drops += 1;
            return Vec::new();
        }
        if interest.origin == self.id || self.issued.contains_key(&interest.interest_id) {
            return Vec::new();
        }
        self.counters.interests_received += 1;
        self.expire(now);
        let expires_at = now.plus(u64::from(interest.duration_s));
        let id = interest.interest_id;
        let fresh = !self.interests.contains_key(&id);
        if fresh {
            self.interests.insert(
                id,
                CachedInterest {
                    interest: interest.clone(),
                    arrived_at: now,
                    expires_at,
                },
            );
        }
        match self
            .gradients
            .iter_mut()
            .find(|g| g.interest_id == id && g.toward == from)
        {
            Some(g) => g.expires_at = expires_at,
            None => self.gradients.push(GradientEntry {
                interest_id: id,
                toward: from,
                data_rate: interest.data_rate,
                expires_at,
                reinforced: false,
            }),
        }
        // a copy that would arrive with hop_limit 0 is dropped by every
        // receiver, so it is not sent at all
        if fresh && interest.hop_limit > 1 {
            self.counters.interests_rebroadcast += 1;
            let mut next = interest.clone();
            next.hop_limit -= 1;
            return vec![StackAction::Transmit {
                dest: LinkDest::Broadcast,
                packet: Packet::Interest(next),
            }];
        }
        Vec::new()
    }

    /// Source side: one report per cached interest the reading matches, sent
    /// on the reinforced gradient if there is one, else on every gradient.
    pub fn send_matching_data(
        &mut self,
        reading: &SensorReading,
        health: NodeHealth,
        now: SimTime,
    ) -> Vec<StackAction> {
        self.expire(now);
        let mut out = Vec::new();
        if self.is_sink {
            // sink as its own source: delivered locally, nothing to reinforce
            for interest in self.issued.values().filter(|i| i.matches(reading)) {
                let msg = DataMessage::new(
                    DataRoute::Diffusion {
                        interest_id: interest.interest_id,
                    },
                    *reading,
                    interest.hop_limit,
                    health,
                    None,
                );
                if self.data_cache.insert(msg.signature) {
                    out.push(StackAction::Deliver { msg, from: self.id });
                }
            }
            return out;
        }
        let matching: Vec<(u32, u8)> = self
            .interests
            .values()
            .filter(|c| c.interest.matches(reading))
            .map(|c| (c.interest.interest_id, c.interest.hop_limit))
            .collect();
        for (id, hop_limit) in matching {
            let targets: Vec<u32> = match self.reinforced_gradient(id) {
                Some(g) => vec![g.toward],
                None => self.gradients_for(id).map(|g| g.toward).collect(),
            };
            if targets.is_empty() {
                continue;
            }
            let first_hop = (targets.len() == 1).then(|| targets[0]);
            let msg = DataMessage::new(
                DataRoute::Diffusion { interest_id: id },
                *reading,
                hop_limit,
                health,
                first_hop,
            );
            self.data_cache.insert(msg.signature);
            self.counters.reports_originated += 1;
            out.push(StackAction::Transmit {
                dest: LinkDest::to_all(targets),
                packet: Packet::Data(msg),
            });
        }
        out
    }

    /// Periodic report to the tree parent. The sink reports nothing.
    pub fn tree_report(&mut self, reading: &SensorReading, health: NodeHealth) -> Result<Option<StackAction>, StackError> {
        if self.is_sink {
            return Ok(None);
        }
        let parent = self.tree_parent.ok_or(StackError::OrphanNode(self.id))?;
        let msg = DataMessage::new(DataRoute::Tree, *reading, u8::MAX, health, Some(parent));
        self.data_cache.insert(msg.signature);
        self.counters.reports_originated += 1;
        Ok(Some(unicast(parent, Packet::Data(msg))))
    }

    /// Broadcasts a report that every node rebroadcasts once until
    /// `hop_limit` hops have been travelled.
    pub fn flood_data(&mut self, reading: &SensorReading, health: NodeHealth, hop_limit: u8) -> Option<StackAction> {
        if self.is_sink || hop_limit == 0 {
            return None;
        }
        let msg = DataMessage::new(DataRoute::Flood, *reading, hop_limit, health, None);
        self.data_cache.insert(msg.signature);
        self.counters.reports_originated += 1;
        Some(StackAction::Transmit {
            dest: LinkDest::Broadcast,
            packet: Packet::Data(msg),
        })
    }

    /// Handles a report heard from `from`: drops duplicates, delivers at the
    /// sink, otherwise forwards per the report's route.
    pub fn on_data(&mut self, mut msg: DataMessage, from: u32, now: SimTime) -> Result<Vec<StackAction>, StackError> {
        msg.hop_count = msg.hop_count.saturating_add(1);
        if !self.data_cache.insert(msg.signature) {
            self.counters.duplicates_suppressed += 1;
            return Ok(Vec::new());
        }
        if self.is_sink {
            let mut out = Vec::new();
            let key = (msg.route.interest_id(), msg.source);
            let reinforce = matches!(msg.route, DataRoute::Diffusion { .. })
                && !self.reinforced_sources.contains(&key);
            out.push(StackAction::Deliver { msg, from });
            if reinforce {
                out.push(self.reinforce(from, key.0, key.1)?);
            }
            return Ok(out);
        }
        match msg.route {
            DataRoute::Tree => {
                let parent = self.tree_parent.ok_or(StackError::OrphanNode(self.id))?;
                self.counters.reports_forwarded += 1;
                Ok(vec![unicast(parent, Packet::Data(msg))])
            }
            DataRoute::Flood => {
                if msg.hop_count >= msg.hop_limit {
                    self.counters.hop_limit_drops += 1;
                    return Ok(Vec::new());
                }
                self.counters.reports_forwarded += 1;
                Ok(vec![StackAction::Transmit {
                    dest: LinkDest::Broadcast,
                    packet: Packet::Data(msg),
                }])
            }
            DataRoute::Diffusion { interest_id } => {
                self.expire(now);
                self.first_delivery.entry((interest_id, msg.source)).or_insert(from);
                let targets: Vec<u32> = match self.reinforced_gradient(interest_id) {
                    Some(g) if g.toward == from => Vec::new(),
                    Some(g) => vec![g.toward],
                    None => self
                        .gradients_for(interest_id)
                        .map(|g| g.toward)
                        .filter(|t| *t != from)
                        .collect(),
                };
                if targets.is_empty() {
                    return Ok(Vec::new());
                }
                self.counters.reports_forwarded += 1;
                Ok(vec![StackAction::Transmit {
                    dest: LinkDest::to_all(targets),
                    packet: Packet::Data(msg),
                }])
            }
        }
    }

    /// Sink side: reinforces the neighbour that first delivered data from
    /// `source` for `interest_id`.
    pub fn reinforce(&mut self, delivering_neighbor: u32, interest_id: u32, source: u32) -> Result<StackAction, StackError> {
        let interest = self
            .issued
            .get(&interest_id)
            .ok_or(StackError::UnknownInterest(interest_id))?;
        self.reinforced_sources.insert((interest_id, source));
        self.counters.reinforcements_sent += 1;
        Ok(unicast(
            delivering_neighbor,
            Packet::Reinforce(Reinforcement {
                interest_id,
                source,
                origin: self.id,
                data_rate: interest.data_rate.saturating_add(1),
            }),
        ))
    }

    /// Marks the gradient toward `from` reinforced unless another gradient for
    /// the interest already is, then passes the reinforcement on toward the
    /// neighbour that first delivered the source's data.
    pub fn on_reinforce(&mut self, r: &Reinforcement, from: u32, now: SimTime) -> Vec<StackAction> {
        self.expire(now);
        let id = r.interest_id;
        if self.reinforced_gradient(id).is_none() {
            // a gradient exists only toward a neighbour that sent the interest
            if let Some(g) = self
                .gradients
                .iter_mut()
                .find(|g| g.interest_id == id && g.toward == from)
            {
                g.reinforced = true;
                g.data_rate = r.data_rate;
            }
        }
        if r.source == self.id {
            return Vec::new();
        }
        match self.first_delivery.get(&(id, r.source)) {
            Some(&next) if next != from => {
                self.counters.reinforcements_sent += 1;
                vec![unicast(next, Packet::Reinforce(*r))]
            }
            _ => Vec::new(),
        }
    }
}
