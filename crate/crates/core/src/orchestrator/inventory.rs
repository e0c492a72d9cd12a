use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Stock {
    pub total: u32,
    pub available: u32,
    pub committed: u32,
}

impl Stock {
    pub fn balanced(&self) -> bool {
        self.available + self.committed == self.total
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reservation {
    pub id: String,
    pub kind: String,
    pub requested: u32,
    pub committed: u32,
    pub holder: String,
    pub requested_ts: u64,
    pub confirmed_for_ts: u64,
    pub active: bool,
    /// Whether availability has been announced at `confirmed_for_ts`.
    pub announced: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Inventory {
    stock: BTreeMap<String, Stock>,
    reservations: BTreeMap<String, Reservation>,
    next_id: u64,
}

impl Inventory {
    pub fn new(fleet: impl IntoIterator<Item = (String, u32)>) -> Self {
        let stock = fleet
            .into_iter()
            .map(|(kind, n)| (kind, Stock { total: n, available: n, committed: 0 }))
            .collect();
        Inventory { stock, reservations: BTreeMap::new(), next_id: 1 }
    }

    pub fn stock(&self) -> &BTreeMap<String, Stock> {
        &self.stock
    }

    pub fn stock_of(&self, kind: &str) -> Option<Stock> {
        self.stock.get(kind).copied()
    }

    pub fn reservations(&self) -> impl Iterator<Item = &Reservation> {
        self.reservations.values()
    }

    pub fn reservation(&self, id: &str) -> Option<&Reservation> {
        self.reservations.get(id)
    }

    pub fn reserve(
        &mut self,
        kind: &str,
        quantity: u32,
        holder: &str,
        now: u64,
        lead_time_ms: u64,
    ) -> Result<Reservation, OrchestratorError> {
        if quantity == 0 {
            return Err(OrchestratorError::InvalidQuantity);
        }
        let stock = self.stock.get_mut(kind).ok_or_else(|| OrchestratorError::UnknownResource(kind.into()))?;
        if stock.available < quantity {
            return Err(OrchestratorError::InsufficientResources { kind: kind.into(), available: stock.available });
        }
        stock.available -= quantity;
        stock.committed += quantity;
        let id = format!("res-{}", self.next_id);
        self.next_id += 1;
        let reservation = Reservation {
            id: id.clone(),
            kind: kind.into(),
            requested: quantity,
            committed: quantity,
            holder: holder.into(),
            requested_ts: now,
            confirmed_for_ts: now + lead_time_ms,
            active: true,
            announced: false,
        };
        self.reservations.insert(id, reservation.clone());
        Ok(reservation)
    }

    fn active_mut(&mut self, id: &str) -> Result<&mut Reservation, OrchestratorError> {
        match self.reservations.get_mut(id) {
            Some(r) if r.active => Ok(r),
            _ => Err(OrchestratorError::UnknownReservation(id.into())),
        }
    }

    /// Units lost in the field leave the fleet for good.
    pub fn lose(&mut self, id: &str, quantity: u32) -> Result<Reservation, OrchestratorError> {
        let r = self.active_mut(id)?;
        if quantity > r.committed {
            return Err(OrchestratorError::InvalidLoss { reservation: id.into(), committed: r.committed, lost: quantity });
        }
        r.committed -= quantity;
        let r = r.clone();
        let stock = self.stock.get_mut(&r.kind).expect("reservation kind is stocked");
        stock.committed -= quantity;
        stock.total -= quantity;
        Ok(r)
    }

    pub fn release(&mut self, id: &str) -> Result<(Reservation, u32), OrchestratorError> {
        let r = self.active_mut(id)?;
        let released = r.committed;
        r.committed = 0;
        r.active = false;
        let r = r.clone();
        let stock = self.stock.get_mut(&r.kind).expect("reservation kind is stocked");
        stock.committed -= released;
        stock.available += released;
        Ok((r, released))
    }

    pub fn set_requested(&mut self, id: &str, requested: u32) -> Result<Reservation, OrchestratorError> {
        let r = self.active_mut(id)?;
        r.requested = requested;
        Ok(r.clone())
    }

    /// Reservations whose confirmation time has come and not yet announced.
    pub fn due_announcements(&mut self, now: u64) -> Vec<Reservation> {
        let mut due = Vec::new();
        for r in self.reservations.values_mut() {
            if r.active && !r.announced && r.confirmed_for_ts <= now {
                r.announced = true;
                due.push(r.clone());
            }
        }
        due
    }

    pub fn balanced(&self) -> bool {
        self.stock.values().all(Stock::balanced)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fleet() -> Inventory {
        Inventory::new([("vehicle".to_string(), 4)])
    }

    #[test]
    fn reserve_and_insufficient() {
        let mut inv = fleet();
        let r = inv.reserve("vehicle", 3, "team", 2_100_000, 300_000).unwrap();
        assert_eq!(r.confirmed_for_ts, 2_400_000);
        assert_eq!(inv.stock_of("vehicle"), Some(Stock { total: 4, available: 1, committed: 3 }));
        let mut inv = fleet();
        assert_eq!(
            inv.reserve("vehicle", 5, "team", 0, 0),
            Err(OrchestratorError::InsufficientResources { kind: "vehicle".into(), available: 4 })
        );
        assert_eq!(inv.reserve("vehicle", 0, "team", 0, 0), Err(OrchestratorError::InvalidQuantity));
    }

    #[test]
    fn loss_and_release() {
        let mut inv = fleet();
        let id = inv.reserve("vehicle", 3, "team", 0, 0).unwrap().id;
        assert!(matches!(inv.lose(&id, 4), Err(OrchestratorError::InvalidLoss { .. })));
        assert_eq!(inv.lose(&id, 0).unwrap().committed, 3);
        assert_eq!(inv.lose(&id, 1).unwrap().committed, 2);
        assert_eq!(inv.stock_of("vehicle"), Some(Stock { total: 3, available: 1, committed: 2 }));
        assert!(inv.balanced());
        assert_eq!(inv.release(&id).unwrap().1, 2);
        assert_eq!(inv.stock_of("vehicle"), Some(Stock { total: 3, available: 3, committed: 0 }));
        assert!(matches!(inv.release(&id), Err(OrchestratorError::UnknownReservation(_))));
        assert!(inv.balanced());
    }
}
