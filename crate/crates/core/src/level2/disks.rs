//! 13+2 disk array: row layout, per-track disk replicas, and hot-spare
//! rebuild progress.

use std::collections::BTreeMap;

use crate::level2::ledger::Replica;

#[derive(Debug, Clone)]
pub struct DiskArrayState {
    pub n_data: u32,
    pub n_redundancy: u32,
    pub n_tracks: u32,
    pub replicas: Vec<Replica>,
    /// Disk copy gone with a failed disk and not yet rebuilt.
    pub lost: Vec<bool>,
    pub p_lost: Vec<bool>,
    pub q_lost: Vec<bool>,
    /// Failed disk → next row to rebuild onto its spare.
    pub rebuilding: BTreeMap<u32, u32>,
}

impl DiskArrayState {
    pub fn new(n_data: u32, n_tracks: u32) -> Self {
        let rows = n_tracks.div_ceil(n_data) as usize;
        DiskArrayState {
            n_data,
            n_redundancy: 2,
            n_tracks,
            replicas: vec![Replica::default(); n_tracks as usize],
            lost: vec![false; n_tracks as usize],
            p_lost: vec![false; rows],
            q_lost: vec![false; rows],
            rebuilding: BTreeMap::new(),
        }
    }

    pub fn n_disks(&self) -> u32 {
        self.n_data + self.n_redundancy
    }

    pub fn n_rows(&self) -> u32 {
        self.p_lost.len() as u32
    }

    pub fn disk_of(&self, track: u32) -> u32 {
        track % self.n_data
    }

    pub fn row_of(&self, track: u32) -> u32 {
        track / self.n_data
    }

    /// Data tracks of `row`; the last row may be short.
    pub fn members(&self, row: u32) -> std::ops::Range<u32> {
        let lo = row * self.n_data;
        lo..(lo + self.n_data).min(self.n_tracks)
    }

    /// Whether a member holds bad data, counting `force` as bad.
    pub fn member_invalid(&self, track: u32, force: Option<u32>) -> bool {
        self.lost[track as usize] || !self.replicas[track as usize].is_clean() || force == Some(track)
    }

    pub fn invalid_count(&self, row: u32, force: Option<u32>) -> u32 {
        let data = self.members(row).filter(|&t| self.member_invalid(t, force)).count() as u32;
        data + self.p_lost[row as usize] as u32 + self.q_lost[row as usize] as u32
    }

    pub fn reconstructable(&self, row: u32, force: Option<u32>) -> bool {
        self.invalid_count(row, force) <= self.n_redundancy
    }

    /// Mark every member on `disk` lost and start its rebuild. Returns the
    /// data tracks whose replicas were dropped.
    pub fn fail_disk(&mut self, disk: u32) -> Vec<u32> {
        let mut dropped = Vec::new();
        if disk < self.n_data {
            for t in (disk..self.n_tracks).step_by(self.n_data as usize) {
                self.lost[t as usize] = true;
                dropped.push(t);
            }
        } else if disk == self.n_data {
            self.p_lost.iter_mut().for_each(|x| *x = true);
        } else {
            self.q_lost.iter_mut().for_each(|x| *x = true);
        }
        self.rebuilding.insert(disk, 0);
        dropped
    }

    /// Member of `row` on `disk` still waiting for rebuild.
    pub fn needs_rebuild(&self, disk: u32, row: u32) -> bool {
        if disk < self.n_data {
            let t = row * self.n_data + disk;
            t < self.n_tracks && self.lost[t as usize]
        } else if disk == self.n_data {
            self.p_lost[row as usize]
        } else {
            self.q_lost[row as usize]
        }
    }

    pub fn faulty_tracks(&self) -> u64 {
        self.replicas.iter().filter(|r| !r.is_clean()).count() as u64
    }
}
